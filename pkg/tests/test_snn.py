import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurocomm.snn import (
    NeuronConfig,
    SnnState,
    StaleTapeError,
    filter_responses,
    init_weights,
    layer_step,
    snn_backward,
    snn_forward,
    synaptic_filter,
    synaptic_filter_adjoint,
)

CFG = NeuronConfig()


def direct_forward(weights, x, cfg):
    """Brute-force membrane equation with explicit lag sums (no recurrences)."""
    T = x.shape[-1]
    lags = np.arange(1, T + 1)
    alpha = np.exp(-lags / cfg.tau_mem) - np.exp(-lags / cfg.tau_syn)
    beta = np.exp(-lags / cfg.tau_ref)
    for w in weights:
        n_out = w.shape[0]
        o = np.zeros((n_out, T))
        b = np.zeros((n_out, T))
        for l in range(T):
            syn = sum(alpha[d - 1] * x[:, l - d] for d in range(1, l + 1)) if l else np.zeros(x.shape[0])
            fb = sum(beta[d - 1] * b[:, l - d] for d in range(1, l + 1)) if l else np.zeros(n_out)
            o[:, l] = w @ syn + cfg.feedback_sign * fb
            b[:, l] = o[:, l] >= cfg.threshold
        x = b
    return x, o


def test_filter_values_at_lag_one():
    alpha, beta = filter_responses(CFG, 1)
    # exp(-1/20) - exp(-1/5) and exp(-1), evaluated independently
    assert alpha[0] == pytest.approx(0.1324986, abs=1e-6)
    assert beta[0] == pytest.approx(0.3678794, abs=1e-6)


def test_filter_window_bounded_by_truncation():
    with pytest.raises(ValueError):
        filter_responses(CFG, CFG.filter_truncation + 1)


def test_synaptic_filter_matches_convolution(rng):
    x = (rng.random((3, 50)) < 0.3).astype(float)
    alpha, _ = filter_responses(NeuronConfig(filter_truncation=50), 49)
    ref = np.zeros_like(x)
    for l in range(50):
        for d in range(1, l + 1):
            ref[:, l] += alpha[d - 1] * x[:, l - d]
    np.testing.assert_allclose(synaptic_filter(x, CFG), ref, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 30))
def test_synaptic_filter_adjoint_is_transpose(seed, T):
    r = np.random.default_rng(seed)
    x, g = r.standard_normal((2, T)), r.standard_normal((2, T))
    lhs = np.sum(synaptic_filter(x, CFG) * g)
    rhs = np.sum(x * synaptic_filter_adjoint(g, CFG))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_forward_matches_direct_equation(rng):
    ws = [rng.normal(0, 1.5, (5, 6)), rng.normal(0, 1.5, (3, 5))]
    x = (rng.random((6, 30)) < 0.4).astype(float)
    out, tape = snn_forward(ws, x, CFG)
    ref_out, ref_pot = direct_forward(ws, x, CFG)
    np.testing.assert_array_equal(out, ref_out)
    np.testing.assert_allclose(tape.layers[-1].potential[0], ref_pot, atol=1e-12)


def test_streaming_step_matches_batch(rng):
    w = rng.normal(0, 2, (4, 5))
    x = (rng.random((5, 25)) < 0.4).astype(float)
    out, _ = snn_forward([w], x, CFG)
    state = SnnState.zeros(5, 4)
    streamed = np.stack([layer_step(state, w, x[:, l], CFG) for l in range(25)], axis=1)
    np.testing.assert_array_equal(streamed, out)


def test_no_input_means_no_spikes(rng):
    ws = init_weights([6, 5, 3], rng)
    out, tape = snn_forward(ws, np.zeros((6, 20)), CFG)
    assert not out.any()
    assert all(not lt.spikes.any() for lt in tape.layers)


def test_refractory_feedback_suppresses_next_spike():
    # A neuron driven exactly to threshold fires, then its negative feedback
    # pushes it below threshold on the following step.
    cfg = NeuronConfig()
    alpha1 = math.exp(-1 / 20) - math.exp(-1 / 5)
    w = np.array([[1.0 / alpha1]])
    x = np.zeros((1, 3))
    x[0, 0] = 1.0
    out, tape = snn_forward([w], x, cfg)
    assert out[0, 1] == 1.0
    pot = tape.layers[0].potential[0, 0]
    alpha2 = math.exp(-2 / 20) - math.exp(-2 / 5)
    assert pot[2] == pytest.approx(alpha2 / alpha1 - math.exp(-1), abs=1e-12)


def test_backward_matches_finite_differences_relaxed(rng):
    ws = [rng.normal(0, 1.0, (4, 3)), rng.normal(0, 1.0, (2, 4))]
    x = (rng.random((2, 3, 12)) < 0.5).astype(float)
    g_out = rng.standard_normal((2, 2, 12))

    def f(weights):
        out, _ = snn_forward(weights, x, CFG, mode="relaxed")
        return float(np.sum(out * g_out))

    out, tape = snn_forward(ws, x, CFG, mode="relaxed")
    grads = snn_backward(tape, g_out, CFG)
    h = 1e-6
    for i, w in enumerate(ws):
        num = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            wp, wm = [v.copy() for v in ws], [v.copy() for v in ws]
            wp[i][idx] += h
            wm[i][idx] -= h
            num[idx] = (f(wp) - f(wm)) / (2 * h)
        np.testing.assert_allclose(grads[i], num, rtol=1e-5, atol=1e-8)


def test_stale_tape_detected(rng):
    w = rng.normal(0, 1, (3, 4))
    _, tape = snn_forward([w], (rng.random((4, 10)) < 0.5).astype(float), CFG)
    w[0, 0] += 1.0
    with pytest.raises(StaleTapeError):
        snn_backward(tape, np.ones((3, 10)), CFG)


def test_input_shape_mismatch_rejected(rng):
    with pytest.raises(ValueError):
        snn_forward([rng.normal(size=(3, 4))], np.zeros((5, 10)), CFG)


@pytest.mark.parametrize("kw", [dict(tau_mem=0), dict(tau_mem=5.0, tau_syn=5.0), dict(threshold=0), dict(feedback_sign=0)])
def test_invalid_neuron_config(kw):
    with pytest.raises(ValueError):
        NeuronConfig(**kw)
