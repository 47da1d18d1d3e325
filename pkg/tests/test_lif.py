import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popsan.gradcheck import check_lif
from popsan.lif import LIFParams, LIFState, lif_backward, lif_forward, lif_step, surrogate_grad


def scalar_lif(X, W, b, d_c=0.5, d_v=0.75, v_th=0.5, v_rest=0.0):
    """Reference simulator, one neuron and one timestep at a time."""
    T, n_in = X.shape
    n_out = W.shape[0]
    out = np.zeros((T, n_out))
    for j in range(n_out):
        c, v, o = 0.0, v_rest, 0.0
        for t in range(T):
            c = d_c * c + sum(W[j, k] * X[t, k] for k in range(n_in)) + b[j]
            v = d_v * v * (1.0 - o) + c
            o = 1.0 if v > v_th else 0.0
            if o:
                v = v_rest
            out[t, j] = o
    return out


def single(W=0.6):
    return LIFParams(np.array([[W]]), np.zeros(1))


def test_silent_step():
    o, state = lif_step(np.zeros(1), LIFState.zeros(1), single())
    assert o[0] == 0 and state.c[0] == 0 and state.v[0] == 0


def test_single_step_spike_and_reset():
    o, state = lif_step(np.ones(1), LIFState.zeros(1), single())
    assert state.c[0] == pytest.approx(0.6)
    assert o[0] == 1.0
    assert state.v[0] == 0.0


def test_two_step_hand_simulation():
    params = single()
    _, state = lif_step(np.ones(1), LIFState.zeros(1), params)
    o, state = lif_step(np.zeros(1), state, params)
    assert state.c[0] == pytest.approx(0.3)
    assert state.v[0] == pytest.approx(0.3)
    assert o[0] == 0.0
    O, trace = lif_forward(np.array([[1.0], [0.0]]), params)
    np.testing.assert_array_equal(O[:, 0], [1.0, 0.0])
    np.testing.assert_allclose(trace.v[:, 0], [0.6, 0.3])


def test_step_rejects_non_finite_state():
    state = LIFState.zeros(1)
    state.v[0] = np.nan
    with pytest.raises(ValueError):
        lif_step(np.zeros(1), state, single())


def test_zero_weights_are_silent(rng):
    params = LIFParams(np.zeros((3, 4)), np.zeros(3))
    O, _ = lif_forward(rng.normal(size=(6, 4)) * 10, params)
    assert not O.any()


def test_large_bias_spikes_at_first_step(rng):
    params = LIFParams(np.zeros((3, 2)), np.full(3, 0.8), d_v=0.1)
    O, _ = lif_forward(rng.random((4, 2)), params)
    assert O[0].all()


def test_matches_scalar_reference(rng):
    W = rng.normal(0.4, 0.8, (2, 3))
    b = rng.normal(0.1, 0.2, 2)
    X = (rng.random((4, 3)) < 0.7).astype(float)
    O, _ = lif_forward(X, LIFParams(W, b))
    np.testing.assert_array_equal(O, scalar_lif(X, W, b))
    assert O.any()


def test_surrogate_window():
    assert surrogate_grad(0.5) == 1.0
    assert surrogate_grad(1.5) == 0.0
    assert surrogate_grad(0.9, v_th=0.5, width=1.0) == 1.0
    assert surrogate_grad(0.5, width=0.25) == 4.0


def test_backward_zero_gradient(rng):
    params = LIFParams(rng.normal(size=(2, 3)), rng.normal(size=2))
    _, trace = lif_forward(rng.random((4, 3)), params)
    for g in lif_backward(np.zeros((4, 2)), trace, params):
        assert not g.any()


def test_closed_surrogate_window_blocks_gradient(rng):
    # strongly inhibited: no spikes and every voltage far below threshold
    params = LIFParams(-np.ones((2, 3)), np.full(2, -5.0))
    O, trace = lif_forward(rng.random((3, 3)), params)
    assert not O.any() and np.all(np.abs(trace.v - 0.5) > 0.5)
    dW, db, dX = lif_backward(rng.normal(size=(3, 2)), trace, params)
    assert not dW.any() and not db.any() and not dX.any()


def test_backward_rejects_mismatched_trace(rng):
    params = LIFParams(rng.normal(size=(2, 3)), np.zeros(2))
    _, trace = lif_forward(rng.random((4, 3)), params)
    with pytest.raises(ValueError):
        lif_backward(np.zeros((3, 2)), trace, params)
    with pytest.raises(ValueError):
        lif_backward(np.zeros((4, 2)), trace, LIFParams(np.zeros((2, 5)), np.zeros(2)))


def test_one_by_one_finite_differences(rng):
    for r in check_lif(rng, n_in=1, n_out=1, T=3, batch=1):
        assert r.rel_err < 1e-4, r


@pytest.mark.parametrize("kw", [dict(d_c=1.0), dict(d_v=-0.1), dict(v_th=0.0), dict(width=0.0)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        LIFParams(np.zeros((1, 1)), np.zeros(1), **kw)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_gradients_match_finite_differences(n_in, n_out, T, seed):
    for r in check_lif(np.random.default_rng(seed), n_in, n_out, T):
        assert r.rel_err <= 1e-4, r


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_spikes_binary_reset_and_deterministic(n_in, n_out, T, seed):
    r = np.random.default_rng(seed)
    params = LIFParams(r.normal(0, 1, (n_out, n_in)), r.normal(0, 0.3, n_out))
    X = r.normal(0.5, 0.5, (T, n_in))
    O, trace = lif_forward(X, params)
    assert O.shape == (T, n_out)
    assert set(np.unique(O)) <= {0.0, 1.0}
    O2, trace2 = lif_forward(X, params)
    np.testing.assert_array_equal(O, O2)
    np.testing.assert_array_equal(trace.v, trace2.v)
    # after a spike the next voltage integrates from v_rest: v[t+1] == c[t+1]
    for t in range(T - 1):
        fired = O[t] > 0
        np.testing.assert_array_equal(trace.v[t + 1][fired], trace.c[t + 1][fired])
