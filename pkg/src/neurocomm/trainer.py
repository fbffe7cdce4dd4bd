"""Surrogate-gradient training and evaluation of the end-to-end link.

Three regimes are supported:

``hyper``
    Encoders, decoder base weights, hypernetwork and pilots are trained;
    the decoder is modulated per frame by the hypernetwork.
``joint``
    No hypernetwork and no pilots; the decoder uses its base weights.
``per_channel``
    Like ``joint`` but every frame goes through one fixed realization.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .channel import convolve_taps, project_ball, sample_channel
from .hypernet import decide, hyper_forward, pilot_observation
from .metrics import MetricTrace
from .system import (
    REGIMES,
    FrameNoise,
    SystemConfig,
    backward_pipeline,
    calibrate_init,
    dec_weights,
    forward_pipeline,
    hyper_weights,
    init_params,
    loss_and_grad,
    trainable_names,
)

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """Non-finite loss or gradient during training."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    steps: int | None = None
    channel_draws: int = 1000
    regime: str = "hyper"
    seed: int = 0
    loss_horizon: str = "final_step"
    momentum: float = 0.0
    grad_clip: float | None = None  # global L2 norm cap on the summed gradient

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.loss_horizon not in ("final_step", "all_steps"):
            raise ValueError(f"unknown loss horizon {self.loss_horizon!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive")

    def n_steps(self, n_examples: int) -> int:
        """Explicit ``steps``, else enough steps for ``channel_draws`` passes over the data."""
        if self.steps is not None:
            return self.steps
        return math.ceil(self.channel_draws * n_examples / self.batch_size)


def device_inputs(rasters: np.ndarray, channels: Sequence[np.ndarray] | None) -> list[np.ndarray]:
    """Split ``[B, D, L]`` rasters into per-device inputs."""
    rasters = np.asarray(rasters, dtype=np.float64)
    if channels is None:
        return [rasters]
    return [rasters[:, idx, :] for idx in channels]


def _regime_forward(regime: str) -> str:
    return "hyper" if regime == "hyper" else "joint"


def train_step(
    params: dict,
    batch: tuple[list[np.ndarray], np.ndarray],
    cfg: SystemConfig,
    tcfg: TrainConfig,
    rng: np.random.Generator,
    fixed_taps: np.ndarray | None = None,
    velocity: dict | None = None,
) -> tuple[dict, float]:
    """One SGD update on a Monte-Carlo draw of channels and noise.

    Returns the updated parameters (new arrays) and the batch-mean loss.
    The gradient is summed over the batch.
    """
    inputs, labels = batch
    B = len(labels)
    if tcfg.regime == "per_channel":
        if fixed_taps is None:
            raise ValueError("per_channel training needs a fixed realization")
        taps = np.broadcast_to(fixed_taps, (B,) + fixed_taps.shape)
    else:
        taps = sample_channel(cfg.channel, rng, batch=B)
    noise = FrameNoise.sample(cfg, B, rng)
    out = forward_pipeline(params, cfg, inputs, taps, noise, _regime_forward(tcfg.regime), "hard")
    loss, g_v = loss_and_grad(out, labels, tcfg.loss_horizon)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    grads = backward_pipeline(params, cfg, out, g_v)
    names = trainable_names(params, tcfg.regime)
    for name in names:
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient in {name}")
    clip = 1.0
    if tcfg.grad_clip is not None:
        norm = math.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in names))
        if norm > tcfg.grad_clip:
            clip = tcfg.grad_clip / norm
    new = dict(params)
    for name in names:
        g = grads[name] * clip
        if tcfg.momentum and velocity is not None:
            v = tcfg.momentum * velocity.get(name, 0.0) + g
            velocity[name] = v
            g = v
        new[name] = params[name] - tcfg.learning_rate * g
    if tcfg.regime == "hyper":
        e_p = cfg.energy.pilot_budget
        for k in range(cfg.K):
            new[f"pilot{k}"] = project_ball(new[f"pilot{k}"], e_p)
    return new, loss / B


def train(
    params: dict,
    rasters: np.ndarray,
    labels: np.ndarray,
    cfg: SystemConfig,
    tcfg: TrainConfig,
    channels: Sequence[np.ndarray] | None = None,
    fixed_taps: np.ndarray | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> tuple[dict, list[float]]:
    """Run ``tcfg.n_steps`` updates with minibatches drawn without replacement per epoch."""
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 1]))
    n = len(labels)
    order = rng.permutation(n)
    pos = 0
    velocity: dict = {}
    losses = []
    t0 = time.perf_counter()
    for step in range(tcfg.n_steps(n)):
        if pos + tcfg.batch_size > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + tcfg.batch_size]
        pos += tcfg.batch_size
        batch = (device_inputs(rasters[idx], channels), labels[idx])
        params, loss = train_step(params, batch, cfg, tcfg, rng, fixed_taps, velocity)
        losses.append(loss)
        if on_step is not None:
            on_step({"step": step + 1, "loss": loss, "wall_time": time.perf_counter() - t0})
    return params, losses


def evaluate(
    params: dict,
    rasters: np.ndarray,
    labels: np.ndarray,
    cfg: SystemConfig,
    regime: str = "hyper",
    n_realizations: int = 300,
    seed: int = 0,
    channels: Sequence[np.ndarray] | None = None,
    fixed_taps: np.ndarray | None = None,
    batch_size: int = 256,
) -> MetricTrace:
    """Per-step accuracy, cumulative transmit energy and spike counts.

    Each test example is sent through ``n_realizations`` independent
    channel and noise draws (or through ``fixed_taps`` with fresh noise).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    L, L_b = cfg.L, cfg.L_b
    correct = np.zeros(L)
    energy = np.zeros(L)
    enc_sp = np.zeros(L)
    dec_sp = np.zeros(L)
    frames = 0
    fwd_regime = _regime_forward(regime)
    n = len(labels)
    for _ in range(n_realizations):
        for start in range(0, n, batch_size):
            idx = slice(start, min(start + batch_size, n))
            y = labels[idx]
            B = len(y)
            if fixed_taps is not None:
                taps = np.broadcast_to(fixed_taps, (B,) + fixed_taps.shape)
            else:
                taps = sample_channel(cfg.channel, rng, batch=B)
            noise = FrameNoise.sample(cfg, B, rng)
            out = forward_pipeline(params, cfg, device_inputs(rasters[idx], channels), taps, noise, fwd_regime)
            correct += np.sum(decide(out.probs, axis=1) == y[:, None], axis=0)
            e = sum(np.sum(s * s, axis=1) for s in out.tx)  # [B, L*L_b]
            energy += np.cumsum(e.reshape(B, L, L_b).sum(axis=(0, 2)))
            enc = sum(x.sum(axis=1) for x in out.enc_spikes)  # [B, T_enc]
            enc_sp += np.cumsum(enc.reshape(B, L, -1).sum(axis=(0, 2)))
            dec_sp += np.cumsum(out.spikes_out.sum(axis=(0, 1)))
            frames += B
    return MetricTrace(
        accuracy=correct / frames,
        cumulative_energy=energy / frames,
        enc_spikes=enc_sp / frames,
        dec_spikes=dec_sp / frames,
        regime=regime,
        scheme=cfg.scheme,
        seed=seed,
    )


def fold_scalings(params: dict, cfg: SystemConfig, taps: np.ndarray) -> dict:
    """Bake the hypernetwork scalings for one realization into the decoder base weights.

    Uses the noiseless pilot observation; the result runs in the ``joint``
    or ``per_channel`` regimes with the same decoder the hyper receiver
    would materialize for that channel.
    """
    yp = np.stack([convolve_taps(taps[k], params[f"pilot{k}"]) for k in range(cfg.K)], axis=0)
    base = dec_weights(params)
    scalings, _ = hyper_forward(pilot_observation(yp, cfg.pilot_scale), hyper_weights(params), [w.shape[1] for w in base])
    out = dict(params)
    for i, (w, s) in enumerate(zip(base, scalings)):
        out[f"dec.{i}"] = w * s[None, :]
    return out


@dataclass
class GradCheckReport:
    errors: dict[str, float]  # per tensor relative error
    magnitudes: dict[str, float]  # per tensor max |analytic gradient|

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def worst(self) -> str:
        return max(self.errors, key=self.errors.get)


def grad_check_params(cfg: SystemConfig, seed: int = 0, sparsity: float = 0.4, target_std: float = 1.0) -> dict:
    """Parameters for a gradient check with every path carrying signal.

    Weights are calibrated so neurons sit near threshold (otherwise the
    relaxed spikes saturate and gradients drown in finite-difference
    round-off) and the hypernetwork output layer is randomized so the
    scalings depend on the pilots.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    params = init_params(cfg, rng)
    inputs = [(rng.random((16, d, cfg.L)) < sparsity).astype(np.float64) for d in cfg.D_u]
    params = calibrate_init(params, cfg, inputs, rng, target_std)
    params["hyper.W2"] = 0.1 * rng.standard_normal(params["hyper.W2"].shape)
    return params


def grad_check(
    params: dict,
    cfg: SystemConfig,
    regime: str = "hyper",
    batch: int = 2,
    seed: int = 0,
    step: float = 1e-5,
    sparsity: float = 0.4,
) -> GradCheckReport:
    """Relaxed-mode analytic gradients vs central finite differences.

    Channel, noise, hop offsets and inputs are frozen.  Returns, per
    parameter tensor, ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``.
    """
    rng = np.random.default_rng(seed)
    inputs = [(rng.random((batch, d, cfg.L)) < sparsity).astype(np.float64) for d in cfg.D_u]
    labels = np.arange(batch) % cfg.D_v
    taps = sample_channel(cfg.channel, rng, batch=batch)
    noise = FrameNoise.sample(cfg, batch, rng)
    fwd_regime = _regime_forward(regime)

    def loss_of(p):
        out = forward_pipeline(p, cfg, inputs, taps, noise, fwd_regime, "relaxed")
        return loss_and_grad(out, labels)[0]

    out = forward_pipeline(params, cfg, inputs, taps, noise, fwd_regime, "relaxed")
    _, g_v = loss_and_grad(out, labels)
    analytic = backward_pipeline(params, cfg, out, g_v)
    errors, mags = {}, {}
    for name, p in params.items():
        numeric = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            q = dict(params)
            arr = p.copy()
            arr[idx] = p[idx] + step
            q[name] = arr
            lp = loss_of(q)
            arr = p.copy()
            arr[idx] = p[idx] - step
            q[name] = arr
            lm = loss_of(q)
            numeric[idx] = (lp - lm) / (2 * step)
        a = analytic[name]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        errors[name] = 0.0 if scale == 0 else float(np.abs(a - numeric).max() / scale)
        mags[name] = float(np.abs(a).max(initial=0.0))
    return GradCheckReport(errors, mags)


def average_traces(traces: Sequence[MetricTrace]) -> MetricTrace:
    first = traces[0]
    mean = lambda attr: np.mean([getattr(t, attr) for t in traces], axis=0)
    return MetricTrace(
        mean("accuracy"), mean("cumulative_energy"), mean("enc_spikes"), mean("dec_spikes"),
        first.regime, first.scheme, first.seed, first.config_hash,
    )


def per_channel_evaluate(
    params: dict,
    rasters: np.ndarray,
    labels: np.ndarray,
    test_rasters: np.ndarray,
    test_labels: np.ndarray,
    cfg: SystemConfig,
    tcfg: TrainConfig,
    n_draws: int = 5,
    n_realizations: int = 20,
    channels: Sequence[np.ndarray] | None = None,
    warm_start: bool = True,
) -> MetricTrace:
    """Ideal per-realization learning, averaged over ``n_draws`` channel draws.

    For every draw the model is trained on that single realization
    (``per_channel`` regime) and tested on it with fresh noise.  With
    ``warm_start`` training starts from the hypernetwork's decoder for the
    draw (see :func:`fold_scalings`); otherwise from ``params`` as given.
    """
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 6]))
    traces = []
    for j in range(n_draws):
        taps = sample_channel(cfg.channel, rng)
        start = fold_scalings(params, cfg, taps) if warm_start else params
        tj = TrainConfig(
            learning_rate=tcfg.learning_rate, batch_size=tcfg.batch_size, steps=tcfg.steps,
            channel_draws=tcfg.channel_draws, regime="per_channel", seed=tcfg.seed * 1000 + j,
            loss_horizon=tcfg.loss_horizon, momentum=tcfg.momentum, grad_clip=tcfg.grad_clip,
        )
        tuned, _ = train(start, rasters, labels, cfg, tj, channels=channels, fixed_taps=taps)
        traces.append(evaluate(
            tuned, test_rasters, test_labels, cfg, "per_channel", n_realizations, tj.seed, channels, fixed_taps=taps,
        ))
    out = average_traces(traces)
    out.seed = tcfg.seed
    return out
