"""Spike <-> channel-sample mapping: time hopping, learned-TH expansion, receiver framing."""

from __future__ import annotations

import numpy as np


def th_offsets(shape, L_b: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-based hop positions, uniform on ``{0, ..., L_b-1}``."""
    return rng.integers(0, L_b, size=shape)


def th_modulate(x: np.ndarray, L_b: int, rng: np.random.Generator | None = None, offsets: np.ndarray | None = None):
    """Place each spike of ``x[..., m, l]`` at a random sample of block ``l``.

    Returns ``(s, offsets)`` where ``s`` has ``L * L_b`` samples.  The
    offsets are zero-based; the receiver never sees them.
    """
    x = np.asarray(x, dtype=np.float64)
    if offsets is None:
        offsets = th_offsets(x.shape, L_b, rng)
    L = x.shape[-1]
    s = np.zeros(x.shape[:-1] + (L, L_b))
    np.put_along_axis(s, offsets[..., None], x[..., None], axis=-1)
    return s.reshape(x.shape[:-1] + (L * L_b,)), offsets


def th_demodulate_grad(g: np.ndarray, offsets: np.ndarray, L_b: int) -> np.ndarray:
    """Straight-through gradient of :func:`th_modulate`: read back each hop position."""
    L = offsets.shape[-1]
    blocks = g.reshape(g.shape[:-1] + (L, L_b))
    return np.take_along_axis(blocks, offsets[..., None], axis=-1)[..., 0]


def lth_expand_input(u: np.ndarray, L_b: int) -> np.ndarray:
    """Put each sensed sample at the start of its block, followed by ``L_b - 1`` zeros."""
    u = np.asarray(u)
    L = u.shape[-1]
    out = np.zeros(u.shape[:-1] + (L, L_b), dtype=u.dtype)
    out[..., 0] = u
    return out.reshape(u.shape[:-1] + (L * L_b,))


def pulse_map(s_binary: np.ndarray, amplitude: float) -> np.ndarray:
    return amplitude * np.asarray(s_binary, dtype=np.float64)


def rx_frame(y: np.ndarray, L_b: int) -> np.ndarray:
    """``[..., N_R, L*L_b]`` complex -> ``[..., 2*L_b*N_R, L]`` real.

    Rows of block ``l`` are ordered antenna-major: for each antenna, the
    ``L_b`` real parts then the ``L_b`` imaginary parts.
    """
    n_r, T = y.shape[-2:]
    if T % L_b:
        raise ValueError(f"frame length {T} is not divisible by L_b={L_b}")
    L = T // L_b
    blocks = y.reshape(y.shape[:-1] + (L, L_b))  # [..., N_R, L, L_b]
    stacked = np.concatenate([blocks.real, blocks.imag], axis=-1)  # [..., N_R, L, 2L_b]
    stacked = np.moveaxis(stacked, -2, -1)  # [..., N_R, 2L_b, L]
    return stacked.reshape(y.shape[:-2] + (n_r * 2 * L_b, L))


def rx_unframe(ybar: np.ndarray, L_b: int, N_R: int) -> np.ndarray:
    """Inverse of :func:`rx_frame`; also maps real gradients back to ``dRe + 1j*dIm``."""
    L = ybar.shape[-1]
    x = ybar.reshape(ybar.shape[:-2] + (N_R, 2 * L_b, L))
    x = np.moveaxis(x, -1, -2)  # [..., N_R, L, 2L_b]
    y = x[..., :L_b] + 1j * x[..., L_b:]
    return y.reshape(ybar.shape[:-2] + (N_R, L * L_b))
