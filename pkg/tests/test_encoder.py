import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popsan import encoder as enc
from popsan.gradcheck import check_encoder


def test_receptive_field_at_center_is_one():
    mu = np.array([[0.3, -0.2]])
    sigma = np.array([[0.5, 0.1]])
    A = enc.compute_receptive_field(np.array([0.3]), mu, sigma)
    assert A[0, 0] == 1.0


def test_receptive_field_one_sigma_out():
    mu = np.array([[0.3]])
    sigma = np.array([[0.25]])
    A = enc.compute_receptive_field(np.array([0.55]), mu, sigma)
    assert A[0, 0] == pytest.approx(np.exp(-0.5), rel=1e-12)
    assert A[0, 0] == pytest.approx(0.60653, abs=1e-5)


def test_receptive_field_matches_scalar_loop():
    mu = np.array([[-1.0, 0.0, 1.0], [-0.5, 0.25, 2.0]])
    sigma = np.array([[0.4, 0.5, 0.6], [0.3, 0.7, 1.1]])
    s = np.array([0.2, -0.9])
    A = enc.compute_receptive_field(s, mu, sigma)
    assert A.shape == (2, 3)
    for i in range(2):
        for j in range(3):
            expect = np.exp(-((s[i] - mu[i, j]) ** 2) / (2 * sigma[i, j] ** 2))
            assert A[i, j] == pytest.approx(expect, rel=1e-14)
    assert np.all((A > 0) & (A <= 1))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_receptive_field_rejects_non_finite(bad):
    coder = enc.PopulationCoder.tiled([-1.0, -1.0], [1.0, 1.0], 3)
    with pytest.raises(ValueError, match="non-finite"):
        coder.receptive_field(np.array([0.0, bad]))


def test_receptive_field_rejects_wrong_length():
    coder = enc.PopulationCoder.tiled([-1.0, -1.0], [1.0, 1.0], 3)
    with pytest.raises(ValueError):
        coder.receptive_field(np.zeros(3))


def test_tiled_initialisation():
    coder = enc.PopulationCoder.tiled([-2.0, 0.0], [2.0, 1.0], 5)
    np.testing.assert_allclose(coder.mu[0], np.linspace(-2, 2, 5))
    np.testing.assert_allclose(coder.mu[1], np.linspace(0, 1, 5))
    np.testing.assert_allclose(coder.sigma[0], 4.0 / 10)
    np.testing.assert_allclose(coder.sigma[1], 1.0 / 10)


def test_clamp_keeps_sigma_positive():
    coder = enc.PopulationCoder.tiled([-1.0], [1.0], 3)
    coder.sigma[0, 1] = -4.0
    coder.clamp()
    assert np.all(coder.sigma >= enc.SIGMA_MIN)


def test_encode_all_zero_and_all_one(rng):
    assert not enc.encode_spikes(np.zeros((2, 3)), 5, rng).any()
    assert enc.encode_spikes(np.ones((2, 3)), 5, rng).all()


def test_encode_rate_converges(rng):
    spikes = enc.encode_spikes(np.full((1, 4), 0.5), 10000, rng)
    assert spikes.shape == (10000, 4)
    assert set(np.unique(spikes)) <= {0.0, 1.0}
    assert abs(spikes.mean() - 0.5) < 0.02


def test_encode_rejects_zero_timesteps(rng):
    with pytest.raises(ValueError):
        enc.encode_spikes(np.ones((1, 2)), 0, rng)


def test_encode_is_dimension_major(rng):
    A = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    spikes = enc.encode_spikes(A, 2, rng)
    np.testing.assert_array_equal(spikes, [[1, 1, 1, 0, 0, 0]] * 2)


def test_encode_reproducible_for_a_seed():
    A = np.random.default_rng(0).random((3, 4))
    a = enc.encode_spikes(A, 6, np.random.default_rng(9))
    b = enc.encode_spikes(A, 6, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_backward_zero_gradient():
    coder = enc.PopulationCoder.tiled([-1.0], [1.0], 3)
    s = np.array([0.4])
    A = coder.receptive_field(s)
    d_mu, d_sigma = coder.backward(np.zeros((2, 3)), A, s)
    assert not d_mu.any() and not d_sigma.any()


def test_backward_vanishes_at_centers():
    mu = np.array([[0.5, 0.5, 0.5]])
    sigma = np.array([[0.2, 0.3, 0.4]])
    s = np.array([0.5])
    A = enc.compute_receptive_field(s, mu, sigma)
    d_mu, d_sigma = enc.encoder_backward(np.ones((2, 3)), A, s, mu, sigma)
    assert not d_mu.any() and not d_sigma.any()


def test_backward_rejects_bad_shape():
    coder = enc.PopulationCoder.tiled([-1.0], [1.0], 3)
    s = np.array([0.4])
    with pytest.raises(ValueError):
        coder.backward(np.zeros((2, 4)), coder.receptive_field(s), s)


def test_backward_matches_finite_differences(rng):
    for r in check_encoder(rng, obs_dim=1, pop=3, T=2):
        assert r.rel_err < 1e-4, r


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(range(4)))
def test_permuting_dimensions_permutes_neuron_blocks(seed, perm):
    perm = list(perm)
    pop, T = 3, 5
    r = np.random.default_rng(seed)
    mu = r.normal(size=(4, pop))
    sigma = r.uniform(0.2, 1.0, (4, pop))
    s = r.normal(size=4)
    A = enc.compute_receptive_field(s, mu, sigma)
    A_perm = enc.compute_receptive_field(s[perm], mu[perm], sigma[perm])
    np.testing.assert_array_equal(A_perm, A[perm])
    # per-neuron uniforms move with their neuron, so spikes permute blockwise
    u = enc.draw_uniforms(np.random.default_rng(seed), T, 4 * pop)
    u_perm = u.reshape(T, 4, pop)[:, perm].reshape(T, -1)
    spikes = enc.encode_spikes(A, T, uniforms=u).reshape(T, 4, pop)
    spikes_perm = enc.encode_spikes(A_perm, T, uniforms=u_perm).reshape(T, 4, pop)
    np.testing.assert_array_equal(spikes_perm, spikes[:, perm])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_backward_shapes_and_finiteness(obs_dim, pop, T, seed):
    r = np.random.default_rng(seed)
    mu = r.normal(size=(obs_dim, pop))
    sigma = np.full((obs_dim, pop), enc.SIGMA_MIN)
    s = r.normal(size=obs_dim)
    A = enc.compute_receptive_field(s, mu, sigma)
    d_mu, d_sigma = enc.encoder_backward(r.normal(size=(T, obs_dim * pop)), A, s, mu, sigma)
    assert d_mu.shape == mu.shape and d_sigma.shape == sigma.shape
    assert np.all(np.isfinite(d_mu)) and np.all(np.isfinite(d_sigma))
