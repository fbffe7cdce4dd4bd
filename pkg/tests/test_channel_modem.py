import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurocomm.channel import (
    ChannelConfig,
    EnergyConstraint,
    convolve_taps,
    convolve_taps_adjoint,
    enforce_energy,
    enforce_energy_backward,
    sample_channel,
    snr_to_budget,
    transmit_mac,
)
from neurocomm.modem import lth_expand_input, rx_frame, rx_unframe, th_demodulate_grad, th_modulate


def direct_mac(taps, frames, noise):
    """Received sample y[r, t] = sum_k sum_m sum_d h[k, r, m, d] s_k[m, t - d] + n[r, t]."""
    K, N_R, N_T, L_h = taps.shape
    T = frames[0].shape[-1]
    y = noise.copy()
    for k in range(K):
        for r in range(N_R):
            for t in range(T):
                for m in range(N_T):
                    for d in range(L_h):
                        if t - d >= 0:
                            y[r, t] += taps[k, r, m, d] * frames[k][m, t - d]
    return y


def test_mac_matches_direct_sum(rng):
    for _ in range(20):
        cfg = ChannelConfig(K=int(rng.integers(1, 3)), N_T=int(rng.integers(1, 3)), N_R=int(rng.integers(1, 3)))
        taps = sample_channel(cfg, rng)
        frames = [rng.standard_normal((cfg.N_T, 12)) for _ in range(cfg.K)]
        noise = rng.standard_normal((cfg.N_R, 12)) + 1j * rng.standard_normal((cfg.N_R, 12))
        y = transmit_mac(taps, frames, cfg.N_0, noise=noise)
        assert np.max(np.abs(y - direct_mac(taps, frames, noise))) <= 1e-12


def test_channel_power_profile(rng):
    cfg = ChannelConfig(N_T=2, N_R=2, delay_taps=(0, 2), power_profile=(0.75, 0.25))
    taps = sample_channel(cfg, rng, batch=20000)
    power = np.mean(np.abs(taps) ** 2, axis=(0, 1, 2, 3))
    np.testing.assert_allclose(power, [0.75, 0, 0.25], atol=0.02)


def test_convolution_adjoint(rng):
    cfg = ChannelConfig(N_T=3, N_R=2)
    taps = sample_channel(cfg, rng)[0]
    s = rng.standard_normal((3, 15))
    g = rng.standard_normal((2, 15)) + 1j * rng.standard_normal((2, 15))
    y = convolve_taps(taps, s)
    lhs = np.sum(y.real * g.real + y.imag * g.imag)
    rhs = np.sum(s * convolve_taps_adjoint(taps, g))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("kw", [dict(K=0), dict(power_profile=(0.5, 0.5, 0.5, 0.5, 0.5)), dict(N_0=-1.0),
                                dict(delay_taps=(0, 0, 1, 2, 3))])
def test_invalid_channel_config(kw):
    with pytest.raises(ValueError):
        ChannelConfig(**kw)


def test_per_frame_energy_projection(rng):
    c = EnergyConstraint("per_frame", 4.0, 1.0)
    s = 3.0 * rng.standard_normal((2, 10))
    out = enforce_energy(s, c)
    assert np.sum(out ** 2) == pytest.approx(4.0)
    small = 0.01 * s
    np.testing.assert_array_equal(enforce_energy(small, c), small)


def test_per_frame_projection_gradient(rng):
    c = EnergyConstraint("per_frame", 4.0, 1.0)
    s = 3.0 * rng.standard_normal((2, 6))
    g = rng.standard_normal((2, 6))
    h = 1e-6
    num = np.zeros_like(s)
    for idx in np.ndindex(s.shape):
        sp, sm = s.copy(), s.copy()
        sp[idx] += h
        sm[idx] -= h
        num[idx] = (np.sum(g * enforce_energy(sp, c)) - np.sum(g * enforce_energy(sm, c))) / (2 * h)
    np.testing.assert_allclose(enforce_energy_backward(s, g, c), num, atol=1e-7)


def test_per_symbol_clip():
    c = EnergyConstraint("per_symbol", 4.0, 1.0)
    out = enforce_energy(np.array([[-5.0, 1.0, 3.0]]), c)
    np.testing.assert_array_equal(out, [[-2.0, 1.0, 2.0]])


def test_snr_budget():
    assert snr_to_budget(10.0, 1.0, "per_symbol", 100) == pytest.approx(10.0)
    assert snr_to_budget(10.0, 2.0, "per_frame", 100) == pytest.approx(2000.0)


def test_th_modulate_small_example():
    x = np.array([[1.0, 0.0, 1.0]])
    s, off = th_modulate(x, 2, offsets=np.array([[1, 0, 0]]))
    np.testing.assert_array_equal(s, [[0, 1, 0, 0, 1, 0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_th_preserves_counts_per_block(seed, L_b):
    r = np.random.default_rng(seed)
    x = (r.random((3, 20)) < 0.3).astype(float)
    s, off = th_modulate(x, L_b, rng=r)
    blocks = s.reshape(3, 20, L_b)
    np.testing.assert_array_equal(blocks.sum(-1), x)
    assert s.sum() == x.sum()
    assert off.min() >= 0 and off.max() < L_b
    np.testing.assert_array_equal(th_demodulate_grad(s, off, L_b), x)


def test_lth_expansion_places_sample_first():
    u = np.array([[1, 2, 3]])
    np.testing.assert_array_equal(lth_expand_input(u, 3), [[1, 0, 0, 2, 0, 0, 3, 0, 0]])


def test_rx_frame_layout():
    y = np.array([[1 + 5j, 2 + 6j, 3 + 7j, 4 + 8j]])
    # one antenna, L_b = 2: column l holds re(block l) then im(block l)
    np.testing.assert_array_equal(rx_frame(y, 2), [[1, 3], [2, 4], [5, 7], [6, 8]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(1, 4), st.integers(1, 6))
def test_rx_roundtrip(seed, N_R, L_b, L):
    r = np.random.default_rng(seed)
    y = r.standard_normal((N_R, L * L_b)) + 1j * r.standard_normal((N_R, L * L_b))
    ybar = rx_frame(y, L_b)
    assert ybar.shape == (2 * L_b * N_R, L)
    np.testing.assert_array_equal(rx_unframe(ybar, L_b, N_R), y)


def test_rx_frame_rejects_bad_length():
    with pytest.raises(ValueError):
        rx_frame(np.zeros((1, 5), dtype=complex), 2)
