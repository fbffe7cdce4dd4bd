import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurocomm.hypernet import (
    HyperWeights,
    decide,
    hyper_backward,
    hyper_forward,
    modulate_weights,
    pilot_observation,
    pilot_observation_grad,
    rate_decode,
    receiver_infer,
)
from neurocomm.snn import NeuronConfig, snn_forward
from neurocomm.system import loss_ce


def test_modulate_small_example():
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = modulate_weights([w], [np.array([2.0, 0.5])])[0]
    np.testing.assert_array_equal(out, [[2.0, 1.0], [6.0, 2.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6))
def test_modulate_matches_dense_diagonal(seed, n_out, n_in):
    r = np.random.default_rng(seed)
    w, s = r.standard_normal((n_out, n_in)), r.standard_normal(n_in)
    dense = w @ np.diag(s)
    assert np.max(np.abs(modulate_weights([w], [s])[0] - dense)) <= 1e-14


def test_identity_scalings_reproduce_plain_decoder(rng):
    base = [rng.normal(0, 1.5, (5, 8)), rng.normal(0, 1.5, (2, 5))]
    ybar = rng.standard_normal((3, 8, 20))
    cfg = NeuronConfig()
    plain, _ = snn_forward(base, ybar, cfg)
    mod, _ = snn_forward(modulate_weights(base, [np.ones(8), np.ones(5)]), ybar, cfg)
    np.testing.assert_array_equal(plain, mod)


def test_fresh_hypernetwork_outputs_ones(rng):
    hw = HyperWeights.init(6, 4, 7, rng)
    sc, _ = hyper_forward(rng.standard_normal((3, 6)), hw, [3, 4])
    np.testing.assert_array_equal(np.concatenate(sc, axis=-1), np.ones((3, 7)))


def test_hyper_backward_finite_differences(rng):
    hw = HyperWeights(rng.standard_normal((4, 6)), rng.standard_normal(4), rng.standard_normal((5, 4)), rng.standard_normal(5))
    x = rng.standard_normal((3, 6))
    g = rng.standard_normal((3, 5))
    f = lambda h, xx: float(np.sum(np.concatenate(hyper_forward(xx, h, [2, 3])[0], axis=-1) * g))
    _, cache = hyper_forward(x, hw, [2, 3])
    grads, gx = hyper_backward(cache, [g[:, :2], g[:, 2:]], hw)
    eps = 1e-6
    for name in ("W1", "b1", "W2", "b2"):
        p = getattr(hw, name)
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            hp = HyperWeights(**{k: getattr(hw, k).copy() for k in ("W1", "b1", "W2", "b2")})
            hm = HyperWeights(**{k: getattr(hw, k).copy() for k in ("W1", "b1", "W2", "b2")})
            getattr(hp, name)[idx] += eps
            getattr(hm, name)[idx] -= eps
            num[idx] = (f(hp, x) - f(hm, x)) / (2 * eps)
        np.testing.assert_allclose(grads[name], num, atol=1e-6)
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        num[idx] = (f(hw, xp) - f(hw, xm)) / (2 * eps)
    np.testing.assert_allclose(gx, num, atol=1e-6)


def test_pilot_observation_roundtrip(rng):
    yp = rng.standard_normal((2, 1, 3, 4)) + 1j * rng.standard_normal((2, 1, 3, 4))
    obs = pilot_observation(yp, 0.5)
    assert obs.shape == (2, 24)
    back = pilot_observation_grad(obs, yp.shape[1:], 2.0)
    np.testing.assert_allclose(back, yp)


def test_rate_decode_values():
    v = np.array([[1, 1, 1], [0, 0, 0]], dtype=float)
    p = rate_decode(v)
    np.testing.assert_allclose(p, [0.9525741268, 0.0474258732], atol=1e-10)
    assert loss_ce(p, [0, 1]) == pytest.approx(3.0485874, abs=1e-6)
    assert loss_ce(rate_decode(np.zeros((2, 3))), [1, 0]) == pytest.approx(math.log(2), abs=1e-12)


def test_anytime_decode_uses_prefix_counts():
    v = np.array([[0, 1, 0, 0], [0, 0, 1, 1]], dtype=float)
    p = rate_decode(v, per_step=True)
    assert decide(p, axis=0).tolist() == [0, 0, 0, 1]
    np.testing.assert_allclose(p[:, -1], rate_decode(v))


def test_ties_go_to_lowest_index():
    assert decide(np.array([0.25, 0.5, 0.5, 0.25])) == 1
    assert decide(rate_decode(np.zeros((3, 5)))) == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 6))
def test_rate_decode_normalized_and_argmax(seed, D_v):
    r = np.random.default_rng(seed)
    v = (r.random((D_v, 15)) < 0.3).astype(float)
    p = rate_decode(v)
    assert abs(p.sum() - 1.0) <= 1e-12
    counts = v.sum(-1)
    assert decide(p) == int(np.flatnonzero(counts == counts.max())[0])


def test_receiver_without_hypernetwork(rng):
    base = [rng.normal(0, 2, (4, 8)), rng.normal(0, 2, (2, 4))]
    y = rng.standard_normal((2, 12)) + 1j * rng.standard_normal((2, 12))
    p = receiver_infer(y, None, base, None, NeuronConfig(), 2)
    assert p.shape == (2, 6)
    np.testing.assert_allclose(p.sum(0), 1.0)
