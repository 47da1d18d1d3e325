import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popsan.gradcheck import check_shrink
from popsan.shrink import ShrinkLayer, allocation, pop_mean, shrink_backward, shrink_forward


def test_pop_mean_examples():
    assert pop_mean(np.array([[1.0, 0.0, 1.0, 0.0]]))[0] == 0.5
    assert not pop_mean(np.zeros((3, 4))).any()


def test_pop_mean_matches_row_oracle(rng):
    O = (rng.random((3, 5)) < 0.5).astype(float)
    m = pop_mean(O)
    for t in range(3):
        assert m[t] == pytest.approx(sum(O[t]) / 5)


def test_pop_mean_rejects_empty():
    with pytest.raises(ValueError):
        pop_mean(np.zeros((3, 0)))


def test_zero_weights_allocate_uniformly(rng):
    O = (rng.random((4, 3)) < 0.5).astype(float)
    I, cache = shrink_forward(O, ShrinkLayer.zeros(4, 2))
    np.testing.assert_allclose(cache.S, 0.5)
    for row in I:
        np.testing.assert_allclose(row, O.sum(axis=0) / 2)


def test_large_logit_routes_to_one_target():
    O = np.ones((3, 4))
    W = np.zeros((2, 3))
    W[0, 1] = 1e3
    _, cache = shrink_forward(O, ShrinkLayer(W))
    assert cache.S[0, 1] > 1 - 1e-12
    assert cache.S[1, 1] < 1e-12


def test_matches_dense_oracle(rng):
    O = (rng.random((4, 3)) < 0.5).astype(float)
    W = rng.normal(size=(2, 4))
    I, _ = shrink_forward(O, ShrinkLayer(W))
    m = O.mean(axis=1)
    G = W * m[None, :]
    S = np.exp(G) / np.exp(G).sum(axis=0, keepdims=True)
    np.testing.assert_allclose(I, S @ O, rtol=1e-13)


def test_rejects_bad_shapes(rng):
    with pytest.raises(ValueError):
        ShrinkLayer.zeros(2, 2)
    with pytest.raises(ValueError):
        ShrinkLayer.zeros(2, 0)
    with pytest.raises(ValueError):
        shrink_forward(np.zeros((3, 2)), ShrinkLayer.zeros(4, 2))


def test_backward_zero_gradient(rng):
    layer = ShrinkLayer(rng.normal(size=(2, 3)))
    _, cache = shrink_forward(rng.random((3, 4)), layer)
    dW, dO = shrink_backward(np.zeros((2, 4)), cache, layer)
    assert not dW.any() and not dO.any()


def test_weight_gradient_columns_sum_to_zero(rng):
    layer = ShrinkLayer.zeros(3, 2)
    O = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    _, cache = shrink_forward(O, layer)
    dW, _ = shrink_backward(rng.normal(size=(2, 2)), cache, layer)
    np.testing.assert_allclose(dW.sum(axis=0), 0.0, atol=1e-15)


def test_finite_differences(rng):
    for r in check_shrink(rng, 3, 2):
        assert r.rel_err < 1e-4, r


def test_guide_gradient_switch(rng):
    W = rng.normal(size=(2, 3))
    O = rng.random((3, 4))
    dI = rng.normal(size=(2, 4))
    blocked = ShrinkLayer(W.copy(), guide_grad=False)
    _, cache = shrink_forward(O, blocked)
    _, dO = shrink_backward(dI, cache, blocked)
    np.testing.assert_allclose(dO, cache.S.T @ dI)
    flowing = ShrinkLayer(W.copy())
    _, dO_flow = shrink_backward(dI, cache, flowing)
    assert not np.allclose(dO, dO_flow)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0.1, 20.0))
def test_allocation_conserves_mass(T_prev, n, seed, scale):
    r = np.random.default_rng(seed)
    T_next = int(r.integers(1, T_prev))
    layer = ShrinkLayer(r.normal(0, scale, (T_next, T_prev)))
    O = (r.random((T_prev, n)) < 0.5).astype(float)
    I, cache = shrink_forward(O, layer)
    np.testing.assert_allclose(cache.S.sum(axis=0), 1.0, atol=1e-12, rtol=0)
    np.testing.assert_allclose(I.sum(axis=0), O.sum(axis=0), atol=1e-9, rtol=0)
    assert np.all(I >= 0) and np.all(I <= T_prev)


def test_allocation_is_stable_for_huge_logits():
    S = allocation(np.array([[1e300], [-1e300]]), np.array([1.0]))
    np.testing.assert_array_equal(S, [[1.0], [0.0]])
