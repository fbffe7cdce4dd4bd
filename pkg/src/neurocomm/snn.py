"""Spike Response Model layers with surrogate-gradient BPTT.

Every layer is fully connected. The membrane potential of neuron ``k`` at
step ``l`` is

    o[k, l] = sum_j W[k, j] * (alpha * b_j)[l] + sign * (beta * b_k)[l]

with ``alpha[d] = exp(-d/tau_mem) - exp(-d/tau_syn)`` and
``beta[d] = exp(-d/tau_ref)`` for lags ``d >= 1``.  Both convolutions are
evaluated with exponential recurrences, which reproduce the untruncated
filters exactly in O(1) per step.

Arrays are laid out ``[batch, neurons, time]``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as _k


class StaleTapeError(RuntimeError):
    """Raised when weights were modified between forward and backward."""


@dataclass(frozen=True)
class NeuronConfig:
    tau_mem: float = 20.0
    tau_syn: float = 5.0
    tau_ref: float = 1.0
    threshold: float = 1.0
    feedback_sign: int = -1
    surrogate_slope: float = 5.0
    filter_truncation: int = 40

    def __post_init__(self):
        for name in ("tau_mem", "tau_syn", "tau_ref"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tau_mem == self.tau_syn:
            raise ValueError("tau_mem == tau_syn makes the synaptic filter identically zero")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.feedback_sign not in (-1, 1):
            raise ValueError("feedback_sign must be +1 or -1")
        if not self.surrogate_slope > 0:
            raise ValueError("surrogate_slope must be positive")
        if self.filter_truncation < 1:
            raise ValueError("filter_truncation must be >= 1")

    @property
    def decay_mem(self) -> float:
        return float(np.exp(-1.0 / self.tau_mem))

    @property
    def decay_syn(self) -> float:
        return float(np.exp(-1.0 / self.tau_syn))

    @property
    def decay_ref(self) -> float:
        return float(np.exp(-1.0 / self.tau_ref))


def filter_responses(cfg: NeuronConfig, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Synaptic and feedback kernels at lags ``1..window``."""
    if window < 1 or window > cfg.filter_truncation:
        raise ValueError(f"window must lie in [1, {cfg.filter_truncation}]")
    lags = np.arange(1, window + 1, dtype=np.float64)
    alpha = np.exp(-lags / cfg.tau_mem) - np.exp(-lags / cfg.tau_syn)
    beta = np.exp(-lags / cfg.tau_ref)
    return alpha, beta


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _rows(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64).reshape(-1, x.shape[-1])


def synaptic_filter(x: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """Causal convolution of ``x`` (last axis = time) with ``alpha`` at lags >= 1."""
    x = np.asarray(x)
    return _k.exp_filter_diff(_rows(x), cfg.decay_mem, cfg.decay_syn).reshape(x.shape)


def synaptic_filter_adjoint(g: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """Transpose of :func:`synaptic_filter` (anti-causal correlation)."""
    return _k.exp_filter_diff_adjoint(_rows(g), cfg.decay_mem, cfg.decay_syn).reshape(g.shape)


def _digest(a: np.ndarray) -> int:
    return zlib.crc32(np.ascontiguousarray(a).view(np.uint8))


@dataclass
class _LayerTape:
    weight: np.ndarray
    digest: int
    filtered: np.ndarray  # [B, N_in, T]
    potential: np.ndarray  # [B, N_out, T]
    spikes: np.ndarray  # [B, N_out, T]


@dataclass
class Tape:
    mode: str
    layers: list[_LayerTape] = field(default_factory=list)


def _drive(weight: np.ndarray, filtered: np.ndarray) -> np.ndarray:
    return np.matmul(weight, filtered)


def _run_layer(current: np.ndarray, cfg: NeuronConfig, mode: str):
    """Close the self-feedback loop over time for a precomputed synaptic drive."""
    pot, spk = _k.feedback_loop(
        _rows(current), cfg.decay_ref, float(cfg.feedback_sign), cfg.threshold, cfg.surrogate_slope, mode == "relaxed"
    )
    return pot.reshape(current.shape), spk.reshape(current.shape)


def snn_forward(
    weights: Sequence[np.ndarray],
    inputs: np.ndarray,
    cfg: NeuronConfig,
    mode: str = "hard",
) -> tuple[np.ndarray, Tape]:
    """Run a layered SRM network over a whole input sequence.

    ``inputs`` is ``[B, D, T]`` (a 2-D ``[D, T]`` raster is promoted to a
    batch of one).  Weights are ``[N_out, N_in]`` or, for per-example
    weights, ``[B, N_out, N_in]``.  In ``hard`` mode the spike is the
    Heaviside step of ``o - threshold``; ``relaxed`` mode replaces it with
    the sigmoid used by the backward pass.
    """
    if mode not in ("hard", "relaxed"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(inputs, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    tape = Tape(mode=mode)
    for w in weights:
        if w.shape[-1] != x.shape[1]:
            raise ValueError(f"weight expects {w.shape[-1]} inputs, got {x.shape[1]}")
        if w.ndim == 3 and w.shape[0] != x.shape[0]:
            raise ValueError("per-example weights do not match batch size")
        filtered = synaptic_filter(x, cfg)
        potential, spikes = _run_layer(_drive(w, filtered), cfg, mode)
        tape.layers.append(_LayerTape(w, _digest(w), filtered, potential, spikes))
        x = spikes
    return (x[0] if squeeze else x), tape


def snn_backward(
    tape: Tape,
    out_grads: np.ndarray,
    cfg: NeuronConfig,
    input_grad: bool = False,
):
    """Backpropagate ``dL/d(output spikes)`` through time.

    The derivative of the spike nonlinearity is always
    ``slope * sigmoid'(slope * (o - threshold))``; in relaxed mode this is
    the exact derivative of the forward pass.  Returns the list of weight
    gradients, plus the gradient w.r.t. the network input when
    ``input_grad`` is set.
    """
    g = np.asarray(out_grads, dtype=np.float64)
    if g.ndim == 2:
        g = g[None]
    grads: list[np.ndarray] = []
    for lt in reversed(tape.layers):
        if _digest(lt.weight) != lt.digest:
            raise StaleTapeError("weights changed since the forward pass")
        if g.shape != lt.spikes.shape:
            raise ValueError(f"gradient shape {g.shape} != output shape {lt.spikes.shape}")
        g_o = _k.feedback_loop_adjoint(
            _rows(g), _rows(lt.potential), cfg.decay_ref, float(cfg.feedback_sign), cfg.threshold, cfg.surrogate_slope
        ).reshape(g.shape)
        f_t = lt.filtered.transpose(0, 2, 1)
        if lt.weight.ndim == 3:
            grads.append(np.matmul(g_o, f_t))
        else:
            B, K, T = g_o.shape
            grads.append(g_o.transpose(1, 0, 2).reshape(K, B * T) @ f_t.reshape(B * T, -1))
        g_f = np.matmul(np.swapaxes(lt.weight, -1, -2), g_o)
        g = synaptic_filter_adjoint(g_f, cfg)
    grads.reverse()
    if input_grad:
        return grads, g
    return grads


@dataclass
class SnnState:
    """Streaming state of one layer: filter traces and the current step."""

    trace_mem: np.ndarray
    trace_syn: np.ndarray
    trace_ref: np.ndarray
    potential: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n_in: int, n_out: int) -> "SnnState":
        return cls(np.zeros(n_in), np.zeros(n_in), np.zeros(n_out), np.zeros(n_out))


def layer_step(state: SnnState, weights: np.ndarray, in_spikes: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """Advance one layer by a single step and return its output spikes.

    The potential at the current step sees inputs from earlier steps only;
    ``in_spikes`` enters the traces used at the next step.
    """
    in_spikes = np.asarray(in_spikes, dtype=np.float64)
    if weights.shape != (state.trace_ref.shape[0], state.trace_mem.shape[0]) or in_spikes.shape != state.trace_mem.shape:
        raise ValueError("dimension mismatch between state, weights and input")
    o = weights @ (state.trace_mem - state.trace_syn) + cfg.feedback_sign * state.trace_ref
    b = (o >= cfg.threshold).astype(np.float64)
    state.potential = o
    state.trace_mem = cfg.decay_mem * (state.trace_mem + in_spikes)
    state.trace_syn = cfg.decay_syn * (state.trace_syn + in_spikes)
    state.trace_ref = cfg.decay_ref * (state.trace_ref + b)
    state.step += 1
    return b


def init_weights(sizes: Sequence[int], rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for each consecutive layer pair."""
    out = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        c = 1.0 / np.sqrt(n_in)
        out.append(rng.uniform(-c, c, size=(n_out, n_in)))
    return out
