"""End-to-end NeuroComm link: encoders, impulse radio, MAC channel, adaptive decoder.

The forward pass keeps every intermediate needed by :func:`backward_pipeline`,
which propagates the loss gradient back to all parameters, including the
pilot sequences through the pilot channel and the hypernetwork.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .channel import (
    ChannelConfig,
    EnergyConstraint,
    convolve_taps,
    convolve_taps_adjoint,
    crandn,
    sample_channel,
    snr_to_budget,
)
from .hypernet import (
    HyperWeights,
    hyper_backward,
    hyper_forward,
    modulate_weights,
    modulate_weights_backward,
    pilot_observation,
    pilot_observation_grad,
    rate_decode,
)
from .modem import lth_expand_input, rx_frame, rx_unframe, th_demodulate_grad, th_modulate
from .snn import NeuronConfig, init_weights, snn_backward, snn_forward

REGIMES = ("hyper", "joint", "per_channel")


@dataclass(frozen=True)
class SystemConfig:
    D_u: tuple[int, ...] = (64,)
    D_v: int = 2
    L: int = 40
    L_b: int = 4
    scheme: str = "LTH"
    enc_hidden: int = 128
    dec_hidden: int = 128
    hyper_hidden: int = 1024
    L_p: int = 64
    snr_db: float = 10.0
    constraint: str = "per_frame"
    amplitude_gain: float = 3.0
    rx_gain: float | None = None  # fixed receiver gain; None = inverse pulse-plus-noise RMS
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    neuron: NeuronConfig = field(default_factory=NeuronConfig)

    def __post_init__(self):
        object.__setattr__(self, "D_u", tuple(int(d) for d in self.D_u))
        if len(self.D_u) != self.channel.K:
            raise ValueError("one sensor size per device is required")
        if self.scheme not in ("TH", "LTH"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.L_b < 1 or self.L < 1 or self.L_p < 1:
            raise ValueError("L, L_b and L_p must be >= 1")
        if self.constraint not in ("per_frame", "per_symbol"):
            raise ValueError(f"unknown constraint {self.constraint!r}")

    @property
    def K(self) -> int:
        return self.channel.K

    @property
    def N_T(self) -> int:
        return self.channel.N_T

    @property
    def N_R(self) -> int:
        return self.channel.N_R

    @property
    def frame_len(self) -> int:
        return self.L * self.L_b

    @property
    def dec_in(self) -> int:
        return 2 * self.L_b * self.N_R

    @property
    def pilot_dim(self) -> int:
        return 2 * self.L_p * self.K * self.N_R

    @property
    def dec_sizes(self) -> list[int]:
        return [self.dec_in, self.dec_hidden, self.D_v]

    def enc_sizes(self, k: int) -> list[int]:
        return [self.D_u[k], self.enc_hidden, self.N_T]

    @property
    def energy(self) -> EnergyConstraint:
        n0 = self.channel.N_0
        budget = snr_to_budget(self.snr_db, n0, self.constraint, self.N_T * self.frame_len)
        pilot_budget = snr_to_budget(self.snr_db, n0, "per_frame", self.N_T * self.L_p)
        return EnergyConstraint(self.constraint, budget, pilot_budget)

    @property
    def amplitude(self) -> float:
        e = self.energy
        if e.kind == "per_symbol":
            return float(np.sqrt(e.budget))
        return self.amplitude_gain * float(np.sqrt(e.budget / (self.N_T * self.frame_len)))

    @property
    def pilot_scale(self) -> float:
        # Whitening constant: inverse RMS of a received pilot sample.
        e = self.energy
        return float(1.0 / np.sqrt(e.pilot_budget / self.L_p + self.channel.N_0))

    @property
    def rx_scale(self) -> float:
        if self.rx_gain is not None:
            return float(self.rx_gain)
        # Inverse RMS of one pulse through unit total path power, plus noise.
        return float(1.0 / np.sqrt(self.amplitude ** 2 + self.channel.N_0))

    def with_(self, **kw) -> "SystemConfig":
        return replace(self, **kw)


def init_params(cfg: SystemConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameter set; pilots start as white Gaussian noise on the energy sphere."""
    params: dict[str, np.ndarray] = {}
    for k in range(cfg.K):
        for i, w in enumerate(init_weights(cfg.enc_sizes(k), rng)):
            params[f"enc{k}.{i}"] = w
    for i, w in enumerate(init_weights(cfg.dec_sizes, rng)):
        params[f"dec.{i}"] = w
    hw = HyperWeights.init(cfg.pilot_dim, cfg.hyper_hidden, sum(cfg.dec_sizes[:-1]), rng)
    params.update({"hyper.W1": hw.W1, "hyper.b1": hw.b1, "hyper.W2": hw.W2, "hyper.b2": hw.b2})
    e_p = cfg.energy.pilot_budget
    for k in range(cfg.K):
        p = rng.standard_normal((cfg.N_T, cfg.L_p))
        params[f"pilot{k}"] = p * np.sqrt(e_p / np.sum(p * p))
    return params


def calibrate_init(
    params: dict,
    cfg: SystemConfig,
    inputs: Sequence[np.ndarray],
    rng: np.random.Generator,
    target_std: float = 0.5,
    out_mean: float | None = None,
) -> dict:
    """Rescale SNN weights so initial membrane potentials reach threshold scale.

    Layers are visited in signal order on a sample batch; each weight
    matrix is multiplied by ``target_std * threshold / std(potential)``.
    With sparse inputs the plain ``1/sqrt(fan_in)`` range leaves neurons
    silent, which starves the surrogate gradient.
    """
    params = dict(params)
    B = len(inputs[0])
    taps = sample_channel(cfg.channel, rng, batch=B)
    noise = FrameNoise.sample(cfg, B, rng)
    target = target_std * cfg.neuron.threshold
    names = [f"enc{k}.{i}" for k in range(cfg.K) for i in range(2)] + ["dec.0", "dec.1"]
    for name in names:
        out = forward_pipeline(params, cfg, inputs, taps, noise, "joint")
        c = out.cache
        if name.startswith("enc"):
            k, i = int(name[3]), int(name[-1])
            pot = c["enc_tapes"][k].layers[i].potential
        else:
            pot = c["dec_tape"].layers[int(name[-1])].potential
        sd = float(np.std(pot))
        if sd > 0:
            params[name] = params[name] * (target / sd)
    if out_mean is not None:
        # Shift each output row so its mean potential sits at out_mean * threshold.
        out = forward_pipeline(params, cfg, inputs, taps, noise, "joint")
        lt = out.cache["dec_tape"].layers[-1]
        drive = lt.filtered.mean(axis=(0, 2)).sum()
        if drive > 0:
            shift = (out_mean * cfg.neuron.threshold - lt.potential.mean(axis=(0, 2))) / drive
            params["dec.1"] = params["dec.1"] + shift[:, None]
    return params


def trainable_names(params: dict, regime: str) -> list[str]:
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if regime == "hyper":
        return list(params)
    return [n for n in params if n.startswith(("enc", "dec"))]


def enc_weights(params, k: int) -> list[np.ndarray]:
    return [params[f"enc{k}.0"], params[f"enc{k}.1"]]


def dec_weights(params) -> list[np.ndarray]:
    return [params["dec.0"], params["dec.1"]]


def hyper_weights(params) -> HyperWeights:
    return HyperWeights(params["hyper.W1"], params["hyper.b1"], params["hyper.W2"], params["hyper.b2"])


@dataclass
class FrameNoise:
    """Every random draw of one batch of frames apart from the channel taps."""

    data: np.ndarray  # [B, N_R, L*L_b] complex
    pilot: np.ndarray  # [B, K, N_R, L_p] complex
    offsets: list[np.ndarray]  # per device [B, N_T, L] hop positions

    @classmethod
    def sample(cls, cfg: SystemConfig, batch: int, rng: np.random.Generator) -> "FrameNoise":
        n0 = cfg.channel.N_0
        data = crandn(rng, (batch, cfg.N_R, cfg.frame_len), n0)
        pilot = crandn(rng, (batch, cfg.K, cfg.N_R, cfg.L_p), n0)
        offsets = [rng.integers(0, cfg.L_b, size=(batch, cfg.N_T, cfg.L)) for _ in range(cfg.K)]
        return cls(data, pilot, offsets)

    def silent(self) -> "FrameNoise":
        return FrameNoise(np.zeros_like(self.data), np.zeros_like(self.pilot), self.offsets)


@dataclass
class PipelineOutput:
    probs: np.ndarray  # [B, D_v, L] per-step class probabilities
    spikes_out: np.ndarray  # [B, D_v, L] decoder output (spikes or relaxed rates)
    tx: list[np.ndarray]  # per device transmitted frame [B, N_T, L*L_b]
    enc_spikes: list[np.ndarray]
    cache: dict


def _enforce(s: np.ndarray, e: EnergyConstraint):
    if e.kind == "per_symbol":
        a = np.sqrt(e.budget)
        return np.clip(s, -a, a), None
    energy = np.sum(s * s, axis=(-2, -1), keepdims=True)
    scale = np.where(energy > e.budget, np.sqrt(e.budget / np.maximum(energy, 1e-300)), 1.0)
    return s * scale, (energy, scale)


def _enforce_backward(s, g, e: EnergyConstraint, aux):
    if e.kind == "per_symbol":
        return g * (np.abs(s) <= np.sqrt(e.budget))
    energy, scale = aux
    active = energy > e.budget
    proj = s * (np.sum(g * s, axis=(-2, -1), keepdims=True) / np.maximum(energy, 1e-300))
    return np.where(active, scale * (g - proj), g)


def forward_pipeline(
    params: dict,
    cfg: SystemConfig,
    inputs: Sequence[np.ndarray],
    taps: np.ndarray,
    noise: FrameNoise,
    regime: str = "hyper",
    mode: str = "hard",
) -> PipelineOutput:
    """Sensed rasters of every device -> per-step class probabilities.

    ``inputs[k]`` is ``[B, D_u[k], L]``; ``taps`` is ``[B, K, N_R, N_T, L_h]``.
    """
    nc = cfg.neuron
    e = cfg.energy
    cache: dict = {"regime": regime, "mode": mode, "offsets": noise.offsets}
    tx, enc_spikes, enc_tapes, enf_aux, pre_enf = [], [], [], [], []
    for k in range(cfg.K):
        u = np.asarray(inputs[k], dtype=np.float64)
        if u.shape[1:] != (cfg.D_u[k], cfg.L):
            raise ValueError(f"device {k} input has shape {u.shape[1:]}, expected {(cfg.D_u[k], cfg.L)}")
        enc_in = lth_expand_input(u, cfg.L_b) if cfg.scheme == "LTH" else u
        x, tape = snn_forward(enc_weights(params, k), enc_in, nc, mode)
        if cfg.scheme == "TH":
            s_bin, _ = th_modulate(x, cfg.L_b, offsets=noise.offsets[k])
        else:
            s_bin = x
        s_raw = cfg.amplitude * s_bin
        s, aux = _enforce(s_raw, e)
        enc_spikes.append(x)
        enc_tapes.append(tape)
        pre_enf.append(s_raw)
        enf_aux.append(aux)
        tx.append(s)

    y = noise.data.copy()
    for k in range(cfg.K):
        y += convolve_taps(taps[:, k], tx[k])
    ybar = cfg.rx_scale * rx_frame(y, cfg.L_b)

    base = dec_weights(params)
    if regime == "hyper":
        pilots = [params[f"pilot{k}"] for k in range(cfg.K)]
        yp = np.stack([convolve_taps(taps[:, k], np.broadcast_to(pilots[k], (taps.shape[0],) + pilots[k].shape))
                       for k in range(cfg.K)], axis=1) + noise.pilot
        obs = pilot_observation(yp, cfg.pilot_scale)
        hw = hyper_weights(params)
        scalings, hcache = hyper_forward(obs, hw, [w.shape[1] for w in base])
        weights = modulate_weights(base, scalings)
        cache.update(hw=hw, hcache=hcache, scalings=scalings, yp_shape=yp.shape[1:])
    else:
        weights = base
    v, dec_tape = snn_forward(weights, ybar, nc, mode)
    probs = rate_decode(v, per_step=True)
    cache.update(
        enc_tapes=enc_tapes, enf_aux=enf_aux, pre_enf=pre_enf, dec_tape=dec_tape,
        weights=weights, base=base, taps=taps,
    )
    return PipelineOutput(probs, v, tx, enc_spikes, cache)


def loss_ce(probs: np.ndarray, target: np.ndarray) -> float:
    """Cross-entropy ``-sum_j target_j log probs_j`` (probabilities floored at 1e-30)."""
    return float(-np.sum(np.asarray(target) * np.log(np.maximum(probs, 1e-30))))


def loss_and_grad(out: PipelineOutput, labels: np.ndarray, horizon: str = "final_step"):
    """Summed batch cross-entropy and its gradient w.r.t. the decoder outputs."""
    probs = out.probs
    B, D_v, L = probs.shape
    onehot = np.eye(D_v)[labels]  # [B, D_v]
    logp = np.log(np.maximum(probs, 1e-30))
    if horizon == "final_step":
        loss = -np.sum(onehot * logp[..., -1])
        g_counts = probs[..., -1] - onehot
        g_v = np.repeat(g_counts[..., None], L, axis=-1)
    elif horizon == "all_steps":
        loss = -np.sum(onehot[..., None] * logp) / L
        d = (probs - onehot[..., None]) / L  # gradient w.r.t. prefix counts
        g_v = np.cumsum(d[..., ::-1], axis=-1)[..., ::-1]
    else:
        raise ValueError(f"unknown loss horizon {horizon!r}")
    return float(loss), g_v


def backward_pipeline(params: dict, cfg: SystemConfig, out: PipelineOutput, g_v: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every parameter, given ``dL/d(decoder output)``.

    Parameters that the regime does not use receive exact zeros.
    """
    c = out.cache
    nc = cfg.neuron
    grads = {n: np.zeros_like(p) for n, p in params.items()}
    g_w, g_ybar = snn_backward(c["dec_tape"], g_v, nc, input_grad=True)
    if c["regime"] == "hyper":
        g_base, g_scale = modulate_weights_backward(c["base"], c["scalings"], g_w)
        hg, g_obs = hyper_backward(c["hcache"], g_scale, c["hw"])
        for n in ("W1", "b1", "W2", "b2"):
            grads[f"hyper.{n}"] = hg[n]
        g_yp = pilot_observation_grad(g_obs, c["yp_shape"], cfg.pilot_scale)
        for k in range(cfg.K):
            grads[f"pilot{k}"] = convolve_taps_adjoint(c["taps"][:, k], g_yp[:, k]).sum(axis=0)
    else:
        g_base = g_w
    for i, g in enumerate(g_base):
        grads[f"dec.{i}"] = g

    g_y = cfg.rx_scale * rx_unframe(g_ybar, cfg.L_b, cfg.N_R)
    e = cfg.energy
    for k in range(cfg.K):
        g_s = convolve_taps_adjoint(c["taps"][:, k], g_y)
        g_s = _enforce_backward(c["pre_enf"][k], g_s, e, c["enf_aux"][k])
        g_sbin = cfg.amplitude * g_s
        if cfg.scheme == "TH":
            g_x = th_demodulate_grad(g_sbin, c["offsets"][k], cfg.L_b)
        else:
            g_x = g_sbin
        for i, g in enumerate(snn_backward(c["enc_tapes"][k], g_x, nc)):
            grads[f"enc{k}.{i}"] = g
    return grads

