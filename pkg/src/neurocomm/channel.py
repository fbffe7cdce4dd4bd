"""Multipath Rayleigh MIMO multiple-access channel in discrete time.

Transmit samples are real pulse amplitudes; taps and noise are complex.
The pulse shape / matched filter is folded into the discrete taps, so a
path with delay ``d`` contributes a single complex tap at index ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ChannelConfig:
    K: int = 1
    N_T: int = 10
    N_R: int = 20
    delay_taps: tuple[int, ...] = (0, 1, 2, 3, 4)
    power_profile: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    N_0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "delay_taps", tuple(int(d) for d in self.delay_taps))
        object.__setattr__(self, "power_profile", tuple(float(p) for p in self.power_profile))
        if min(self.K, self.N_T, self.N_R) < 1:
            raise ValueError("K, N_T and N_R must be >= 1")
        if len(self.delay_taps) != len(self.power_profile) or not self.delay_taps:
            raise ValueError("delay_taps and power_profile must have equal nonzero length")
        if len(set(self.delay_taps)) != len(self.delay_taps) or min(self.delay_taps) < 0:
            raise ValueError("delays must be distinct and non-negative")
        if min(self.power_profile) <= 0 or abs(sum(self.power_profile) - 1.0) > 1e-9:
            raise ValueError("path powers must be positive and sum to 1")
        if self.N_0 < 0:
            raise ValueError("N_0 must be non-negative")

    @property
    def N_P(self) -> int:
        return len(self.delay_taps)

    @property
    def L_h(self) -> int:
        return max(self.delay_taps) + 1


@dataclass(frozen=True)
class EnergyConstraint:
    kind: str  # "per_frame" or "per_symbol"
    budget: float
    pilot_budget: float

    def __post_init__(self):
        if self.kind not in ("per_frame", "per_symbol"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if not (self.budget > 0 and self.pilot_budget > 0):
            raise ValueError("energy budgets must be positive")


def crandn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    s = np.sqrt(var / 2.0)
    return s * rng.standard_normal(shape) + 1j * s * rng.standard_normal(shape)


def sample_channel(cfg: ChannelConfig, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    """Draw taps ``[K, N_R, N_T, L_h]`` (with a leading batch axis if requested)."""
    lead = () if batch is None else (batch,)
    taps = np.zeros(lead + (cfg.K, cfg.N_R, cfg.N_T, cfg.L_h), dtype=np.complex128)
    gains = crandn(rng, lead + (cfg.K, cfg.N_R, cfg.N_T, cfg.N_P))
    for p, (d, pw) in enumerate(zip(cfg.delay_taps, cfg.power_profile)):
        taps[..., d] = np.sqrt(pw) * gains[..., p]
    return taps


def convolve_taps(taps: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Noiseless MIMO convolution for one device.

    ``taps`` is ``[..., N_R, N_T, L_h]`` and ``s`` is ``[..., N_T, T]``;
    returns ``[..., N_R, T]`` with samples before the frame start taken as 0.
    """
    T = s.shape[-1]
    y = np.zeros(s.shape[:-2] + (taps.shape[-3], T), dtype=np.complex128)
    for d in range(min(taps.shape[-1], T)):
        h = taps[..., d]
        if not np.any(h):
            continue
        y[..., d:] += np.matmul(h, s[..., : T - d])
    return y


def convolve_taps_adjoint(taps: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient of a real loss w.r.t. real inputs of :func:`convolve_taps`.

    ``g`` holds ``dL/dRe(y) + 1j * dL/dIm(y)``.
    """
    T = g.shape[-1]
    out = np.zeros(g.shape[:-2] + (taps.shape[-2], T))
    for d in range(min(taps.shape[-1], T)):
        h = taps[..., d]
        if not np.any(h):
            continue
        hc = np.conj(np.swapaxes(h, -1, -2))
        out[..., : T - d] += (hc.real @ g[..., d:].real - hc.imag @ g[..., d:].imag)
    return out


def transmit_mac(
    taps: np.ndarray,
    frames: Sequence[np.ndarray],
    N_0: float,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Superpose every device's convolved frame and add complex AWGN.

    ``taps`` is ``[..., K, N_R, N_T, L_h]``; ``frames[k]`` is ``[..., N_T, T]``.
    Pass ``noise`` to replay a frozen noise draw.
    """
    if len(frames) != taps.shape[-4]:
        raise ValueError(f"expected {taps.shape[-4]} device frames, got {len(frames)}")
    T = frames[0].shape[-1]
    for f in frames:
        if f.shape[-1] != T or f.shape[-2] != taps.shape[-2]:
            raise ValueError("frame shapes do not match the channel")
    y = sum(convolve_taps(taps[..., k, :, :, :], np.asarray(f, dtype=np.float64)) for k, f in enumerate(frames))
    if noise is not None:
        y = y + noise
    elif N_0 > 0:
        y = y + crandn(rng, y.shape, N_0)
    return y


def transmit_pilots(
    taps: np.ndarray,
    pilots: Sequence[np.ndarray],
    N_0: float,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Orthogonal pilot phase: each device sees only its own channel.

    Returns ``[..., K, N_R, L_p]``.
    """
    out = np.stack(
        [convolve_taps(taps[..., k, :, :, :], np.asarray(p, dtype=np.float64)) for k, p in enumerate(pilots)],
        axis=-3,
    )
    if noise is not None:
        out = out + noise
    elif N_0 > 0:
        out = out + crandn(rng, out.shape, N_0)
    return out


def enforce_energy(frame: np.ndarray, constraint: EnergyConstraint) -> np.ndarray:
    """Project one device's frame onto its energy constraint."""
    frame = np.asarray(frame, dtype=np.float64)
    if constraint.kind == "per_symbol":
        a = np.sqrt(constraint.budget)
        return np.clip(frame, -a, a)
    return frame * frame_scale(frame, constraint.budget)


def frame_scale(frame: np.ndarray, budget: float) -> float:
    energy = float(np.sum(frame * frame))
    if energy <= budget:
        return 1.0
    return float(np.sqrt(budget / energy))


def enforce_energy_backward(frame: np.ndarray, grad: np.ndarray, constraint: EnergyConstraint) -> np.ndarray:
    if constraint.kind == "per_symbol":
        a = np.sqrt(constraint.budget)
        return grad * (np.abs(frame) <= a)
    energy = float(np.sum(frame * frame))
    if energy <= constraint.budget:
        return grad
    k = np.sqrt(constraint.budget / energy)
    return k * (grad - frame * (np.sum(grad * frame) / energy))


def project_ball(x: np.ndarray, budget: float) -> np.ndarray:
    """Scale ``x`` into ``{||x||^2 <= budget}``."""
    return x * frame_scale(x, budget)


def snr_to_budget(snr_db: float, N_0: float, kind: str, symbols_per_frame: int) -> float:
    """Energy budget giving the requested average SNR.

    Per-frame: SNR = (E_fr / symbols_per_frame) / N_0.  Per-symbol: SNR = E_s / N_0.
    """
    snr = 10.0 ** (snr_db / 10.0)
    if kind == "per_symbol":
        return snr * N_0
    return snr * N_0 * symbols_per_frame
