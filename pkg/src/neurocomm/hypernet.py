"""Pilot-conditioned hypernetwork and the adaptive decoding receiver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .modem import rx_frame
from .snn import NeuronConfig, snn_forward


@dataclass
class HyperWeights:
    """Single-hidden-layer ReLU MLP producing one scaling per decoder input neuron."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, n_in: int, hidden: int, n_out: int, rng: np.random.Generator) -> "HyperWeights":
        # Zero output weights with unit bias: training starts from the plain decoder.
        c = 1.0 / np.sqrt(n_in)
        return cls(
            W1=rng.uniform(-c, c, size=(hidden, n_in)),
            b1=np.zeros(hidden),
            W2=np.zeros((n_out, hidden)),
            b2=np.ones(n_out),
        )


def pilot_observation(yp: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Stack received pilots ``[..., K, N_R, L_p]`` into ``[..., 2*K*N_R*L_p]``.

    Complex samples are flattened device-major, then antenna, then time;
    all real parts precede all imaginary parts.
    """
    flat = yp.reshape(yp.shape[:-3] + (-1,))
    return scale * np.concatenate([flat.real, flat.imag], axis=-1)


def pilot_observation_grad(g: np.ndarray, pilot_shape, scale: float = 1.0) -> np.ndarray:
    """Map a gradient on the stacked vector back to ``dRe + 1j*dIm`` of the pilots."""
    n = g.shape[-1] // 2
    z = scale * (g[..., :n] + 1j * g[..., n:])
    return z.reshape(g.shape[:-1] + tuple(pilot_shape))


def split_sizes(sizes: Sequence[int], vec: np.ndarray) -> list[np.ndarray]:
    if vec.shape[-1] != sum(sizes):
        raise ValueError(f"scaling vector has length {vec.shape[-1]}, expected {sum(sizes)}")
    return np.split(vec, np.cumsum(sizes)[:-1], axis=-1)


def hyper_forward(pilot_obs: np.ndarray, hw: HyperWeights, layer_sizes: Sequence[int]):
    """Return the per-layer scaling vectors and a cache for :func:`hyper_backward`."""
    pilot_obs = np.asarray(pilot_obs, dtype=np.float64)
    if pilot_obs.shape[-1] != hw.W1.shape[1]:
        raise ValueError(f"pilot observation has dimension {pilot_obs.shape[-1]}, expected {hw.W1.shape[1]}")
    pre = pilot_obs @ hw.W1.T + hw.b1
    hidden = np.maximum(pre, 0.0)
    out = hidden @ hw.W2.T + hw.b2
    return split_sizes(layer_sizes, out), (pilot_obs, pre, hidden)


def hyper_backward(cache, g_scalings: Sequence[np.ndarray], hw: HyperWeights):
    """Gradients of the MLP given ``dL/d(scalings)``; also returns ``dL/d(pilot_obs)``."""
    x, pre, hidden = cache
    g_out = np.concatenate(list(g_scalings), axis=-1)
    g_out2 = np.atleast_2d(g_out)
    hidden2, x2, pre2 = np.atleast_2d(hidden), np.atleast_2d(x), np.atleast_2d(pre)
    grads = {"W2": g_out2.T @ hidden2, "b2": g_out2.sum(axis=0)}
    g_pre = (g_out2 @ hw.W2) * (pre2 > 0)
    grads["W1"] = g_pre.T @ x2
    grads["b1"] = g_pre.sum(axis=0)
    g_x = (g_pre @ hw.W1).reshape(x.shape)
    return grads, g_x


def modulate_weights(base: Sequence[np.ndarray], scalings: Sequence[np.ndarray]) -> list[np.ndarray]:
    """``W_l = base_l @ diag(scaling_l)``; scalings may carry a leading batch axis."""
    out = []
    for w, s in zip(base, scalings, strict=True):
        if s.shape[-1] != w.shape[1]:
            raise ValueError(f"scaling length {s.shape[-1]} does not match layer input size {w.shape[1]}")
        out.append(w * s[..., None, :])
    return out


def modulate_weights_backward(base, scalings, g_eff):
    """Split effective-weight gradients into base-weight and scaling gradients."""
    g_base, g_scale = [], []
    for w, s, g in zip(base, scalings, g_eff):
        gb = g * s[..., None, :]
        g_base.append(gb.sum(axis=0) if gb.ndim == 3 else gb)
        g_scale.append(np.sum(g * w, axis=-2))
    return g_base, g_scale


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def rate_decode(v: np.ndarray, per_step: bool = False) -> np.ndarray:
    """Softmax of spike counts over ``[..., D_v, l]``.

    With ``per_step`` the result is ``[..., D_v, l]``: column ``t`` uses the
    counts of the first ``t + 1`` steps (anytime decoding).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 1:
        raise ValueError("need at least one time step")
    if per_step:
        return _softmax(np.cumsum(v, axis=-1), axis=-2)
    return _softmax(v.sum(axis=-1), axis=-1)


def decide(probs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Argmax with ties resolved to the lowest class index."""
    return np.argmax(probs, axis=axis)


def receiver_infer(
    y: np.ndarray,
    pilot_obs: np.ndarray | None,
    base: Sequence[np.ndarray],
    hw: HyperWeights | None,
    cfg: NeuronConfig,
    L_b: int,
) -> np.ndarray:
    """Received frame -> per-step class probabilities ``[..., D_v, L]``.

    Without a hypernetwork (``hw is None``) the base weights are used as-is.
    """
    ybar = rx_frame(y, L_b)
    if hw is None:
        weights = list(base)
    else:
        scalings, _ = hyper_forward(pilot_obs, hw, [w.shape[1] for w in base])
        weights = modulate_weights(base, scalings)
    v, _ = snn_forward(weights, ybar, cfg, mode="hard")
    return rate_decode(v, per_step=True)
