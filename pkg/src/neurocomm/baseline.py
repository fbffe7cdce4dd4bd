"""Frame-based digital benchmark.

Each device cuts its raster into subframes of ``L_enc`` steps, compresses
each subframe to a fixed-size bit payload, protects it with a rate-2/3
LDPC code and sends it as BPSK over the shared channel under slotted
ALOHA.  The receiver equalizes with perfect channel knowledge, decodes,
classifies every delivered subframe with a small ANN and keeps a running
majority vote, so its decision can only change at subframe boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import crandn, sample_channel, convolve_taps
from .hypernet import _softmax
from .ldpc import LdpcCode, regular_code
from .metrics import MetricTrace
from .system import SystemConfig

LLR_CLIP = 50.0


@dataclass(frozen=True)
class BaselineConfig:
    L_enc: int = 20
    d_v: int = 3
    d_c: int = 9
    bp_iters: int = 50
    code_seed: int = 0
    aloha_p: float = 0.5
    ann_hidden: int = 512
    learning_rate: float = 0.01
    batch_size: int = 32
    steps: int = 1000

    def __post_init__(self):
        if self.L_enc < 1:
            raise ValueError("L_enc must be >= 1")
        if not 0.0 <= self.aloha_p <= 1.0:
            raise ValueError("ALOHA probability must lie in [0, 1]")


@dataclass(frozen=True)
class SubframePlan:
    L: int
    L_enc: int

    @property
    def F(self) -> int:
        return math.ceil(self.L / self.L_enc)

    def boundary(self, f: int) -> int:
        """Number of sensed steps available once subframe ``f`` (0-based) is complete."""
        return min((f + 1) * self.L_enc, self.L)


def subframe_pack(u: np.ndarray, plan: SubframePlan) -> list[np.ndarray]:
    """Split ``[..., D, L]`` into ``F`` blocks ``[..., D, L_enc]``, zero-padding the last."""
    u = np.asarray(u)
    if u.shape[-1] != plan.L:
        raise ValueError(f"raster has {u.shape[-1]} steps, plan expects {plan.L}")
    pad = plan.F * plan.L_enc - plan.L
    if pad:
        u = np.concatenate([u, np.zeros(u.shape[:-1] + (pad,), dtype=u.dtype)], axis=-1)
    return [u[..., f * plan.L_enc:(f + 1) * plan.L_enc] for f in range(plan.F)]


def subframe_unpack(blocks: Sequence[np.ndarray], plan: SubframePlan) -> np.ndarray:
    return np.concatenate(list(blocks), axis=-1)[..., : plan.L]


class TopKCoder:
    """Fixed-rate sparse coder: a spike count followed by ``k`` fixed-width positions.

    Positions index the block flattened time-major (``t * D + d``).  When a
    block holds more than ``k`` spikes the earliest ``k`` are kept.
    """

    def __init__(self, D: int, L_enc: int, k: int):
        if k < 0:
            raise ValueError("k must be non-negative")
        self.D, self.L_enc, self.k = D, L_enc, k
        self.width = max(1, math.ceil(math.log2(D * L_enc)))
        self.count_width = max(1, math.ceil(math.log2(k + 1)))

    @property
    def n_bits(self) -> int:
        return self.count_width + self.k * self.width

    @classmethod
    def fit(cls, D: int, L_enc: int, n_bits: int) -> "TopKCoder":
        """Largest ``k`` whose payload fits in ``n_bits``."""
        k = 0
        while cls(D, L_enc, k + 1).n_bits <= n_bits:
            k += 1
        c = cls(D, L_enc, k)
        if c.n_bits > n_bits:
            raise ValueError(f"{n_bits} bits cannot hold even an empty payload")
        return c

    @staticmethod
    def _bits(values: np.ndarray, width: int) -> np.ndarray:
        return ((values[..., None] >> np.arange(width - 1, -1, -1)) & 1).astype(np.uint8)

    @staticmethod
    def _ints(bits: np.ndarray) -> np.ndarray:
        w = bits.shape[-1]
        return (bits.astype(np.int64) << np.arange(w - 1, -1, -1)).sum(axis=-1)

    def encode(self, block: np.ndarray) -> np.ndarray:
        """``[..., D, L_enc]`` block(s) to ``[..., n_bits]`` payloads."""
        block = np.asarray(block)
        lead = block.shape[:-2]
        flat = np.swapaxes(block, -1, -2).reshape(lead + (-1,)) != 0
        flat = flat.reshape(-1, flat.shape[-1])
        out = np.zeros((flat.shape[0], self.n_bits), dtype=np.uint8)
        for i, row in enumerate(flat):
            pos = np.flatnonzero(row)[: self.k]
            out[i, : self.count_width] = self._bits(np.array(pos.size), self.count_width)
            if pos.size:
                out[i, self.count_width:self.count_width + pos.size * self.width] = self._bits(pos, self.width).ravel()
        return out.reshape(lead + (self.n_bits,))

    def decode(self, bits: np.ndarray) -> np.ndarray:
        """Payload(s) back to binary blocks; invalid counts or positions are dropped."""
        bits = np.asarray(bits, dtype=np.uint8)[..., : self.n_bits]
        lead = bits.shape[:-1]
        bits = bits.reshape(-1, self.n_bits)
        size = self.D * self.L_enc
        flat = np.zeros((bits.shape[0], size), dtype=np.uint8)
        counts = np.minimum(self._ints(bits[:, : self.count_width]), self.k)
        if self.k:
            pos = self._ints(bits[:, self.count_width:].reshape(-1, self.k, self.width))
            for i in range(bits.shape[0]):
                p = pos[i, : counts[i]]
                flat[i, p[p < size]] = 1
        out = flat.reshape(lead + (self.L_enc, self.D))
        return np.swapaxes(out, -1, -2)


def code_length(L_b: int, L_enc: int, d_c: int) -> int:
    """Longest codeword (multiple of ``d_c``) fitting in the ``L_b * L_enc`` channel uses."""
    n = (L_b * L_enc) // d_c * d_c
    if n == 0:
        raise ValueError(f"{L_b * L_enc} channel uses cannot hold a length-{d_c}-multiple codeword")
    return n


def bpsk_chain(
    codewords: np.ndarray,
    taps: np.ndarray,
    N_0: float,
    E_sym: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """BPSK over one device's MIMO multipath link, MMSE equalization, per-bit LLRs.

    ``codewords`` is ``[B, n]``; ``taps`` is ``[B, N_R, N_T, L_h]``.  Every
    antenna sends the same symbol stream with amplitude ``sqrt(E_sym)``.
    The receiver stacks real and imaginary parts and applies a widely-linear
    MMSE estimate with known taps; each estimate is treated as
    ``mu * x + Gaussian`` which gives ``LLR = 2 x_hat / (1 - mu)``.
    """
    c = np.asarray(codewords)
    B, n = c.shape
    x = 1.0 - 2.0 * c.astype(np.float64)
    a = math.sqrt(E_sym)
    N_T = taps.shape[-2]
    s = np.repeat(a * x[:, None, :], N_T, axis=1)
    y = convolve_taps(taps, s)
    if N_0 > 0:
        y = y + crandn(rng, y.shape, N_0)
    g = taps.sum(axis=-2)  # [B, N_R, L_h]
    N_R, L_h = g.shape[1], g.shape[2]
    # Convolution matrix: y[:, r, t] = sum_d g[:, r, d] x[t - d]
    Cm = np.zeros((B, N_R, n, n), dtype=np.complex128)
    idx = np.arange(n)
    for d in range(min(L_h, n)):
        Cm[:, :, idx[d:], idx[: n - d]] = g[:, :, d, None]
    Cm = Cm.reshape(B, N_R * n, n)
    A = a * np.concatenate([Cm.real, Cm.imag], axis=1)
    yr = np.concatenate([y.real.reshape(B, -1), y.imag.reshape(B, -1)], axis=1)
    At = np.swapaxes(A, 1, 2)
    if N_0 == 0:
        xh = np.stack([np.linalg.lstsq(A[b], yr[b], rcond=None)[0] for b in range(B)])
        return LLR_CLIP * np.sign(xh)
    var = N_0 / 2.0
    M = np.eye(n) + At @ A / var
    Minv = np.linalg.inv(M)
    xh = (Minv @ (At @ yr[..., None]))[..., 0] / var
    resid = np.diagonal(Minv, axis1=1, axis2=2)  # 1 - mu
    return np.clip(2.0 * xh / resid, -LLR_CLIP, LLR_CLIP)


def aloha_round(K: int, p: float, rng: np.random.Generator, rounds: int | None = None):
    """Slotted ALOHA: returns ``(transmit flags, delivered flags)``, each ``[..., K]``.

    A subframe is delivered only when its device is the sole transmitter.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    shape = (K,) if rounds is None else (rounds, K)
    tx = rng.random(shape) < p
    alone = tx.sum(axis=-1, keepdims=True) == 1
    return tx, tx & alone


@dataclass
class AnnClassifier:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator) -> "AnnClassifier":
        c1, c2 = 1.0 / math.sqrt(n_in), 1.0 / math.sqrt(n_hidden)
        return cls(
            rng.uniform(-c1, c1, (n_hidden, n_in)),
            np.zeros(n_hidden),
            rng.uniform(-c2, c2, (n_out, n_hidden)),
            np.zeros(n_out),
        )

    def forward(self, x: np.ndarray):
        h = np.maximum(x @ self.W1.T + self.b1, 0.0)
        return _softmax(h @ self.W2.T + self.b2, axis=-1), h

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=np.float64))[0]


def ann_input(blocks: Sequence[np.ndarray], present: np.ndarray | None = None) -> np.ndarray:
    """Concatenate per-device ``[..., D_k, L_enc]`` blocks; absent devices are zeroed."""
    parts = []
    for k, b in enumerate(blocks):
        v = np.asarray(b, dtype=np.float64).reshape(b.shape[:-2] + (-1,))
        if present is not None:
            v = v * present[..., k, None]
        parts.append(v)
    return np.concatenate(parts, axis=-1)


def train_ann(
    inputs: np.ndarray,
    labels: np.ndarray,
    bcfg: BaselineConfig,
    n_classes: int,
    seed: int = 0,
) -> tuple[AnnClassifier, list[float]]:
    """SGD on the cross-entropy summed over subframes and batch.

    ``inputs`` is ``[N, F, n_in]``: one ANN input per subframe of every
    training example.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    N, F, n_in = inputs.shape
    ann = AnnClassifier.init(n_in, bcfg.ann_hidden, n_classes, rng)
    losses = []
    for _ in range(bcfg.steps):
        idx = rng.choice(N, size=min(bcfg.batch_size, N), replace=False)
        x = inputs[idx].reshape(-1, n_in)
        y = np.repeat(labels[idx], F)
        probs, h = ann.forward(x)
        losses.append(float(-np.sum(np.log(np.maximum(probs[np.arange(len(y)), y], 1e-30))) / len(idx)))
        if bcfg.learning_rate == 0:
            continue
        g = probs.copy()
        g[np.arange(len(y)), y] -= 1.0
        gW2, gb2 = g.T @ h, g.sum(axis=0)
        gh = (g @ ann.W2) * (h > 0)
        gW1, gb1 = gh.T @ x, gh.sum(axis=0)
        lr = bcfg.learning_rate
        ann = AnnClassifier(ann.W1 - lr * gW1, ann.b1 - lr * gb1, ann.W2 - lr * gW2, ann.b2 - lr * gb2)
    return ann, losses


def majority(decisions: Sequence[int], n_classes: int) -> int:
    """Most frequent class; ties and the empty case go to the lowest index."""
    if len(decisions) == 0:
        return 0
    return int(np.argmax(np.bincount(np.asarray(decisions, dtype=np.int64), minlength=n_classes)))


def classify_aggregate(sub_decisions: Sequence[int | None], plan: SubframePlan, n_classes: int) -> np.ndarray:
    """Per-step decisions ``[L]`` from per-subframe decisions (``None`` = erased).

    The running majority is refreshed only when a subframe completes.
    """
    out = np.zeros(plan.L, dtype=np.int64)
    got: list[int] = []
    current = 0
    start = 0
    for f in range(plan.F):
        end = plan.boundary(f)
        out[start:end - 1] = current
        if sub_decisions[f] is not None:
            got.append(int(sub_decisions[f]))
            current = majority(got, n_classes)
        out[end - 1] = current
        start = end
    return out


@dataclass
class DigitalBaseline:
    plan: SubframePlan
    coders: list[TopKCoder]
    code: LdpcCode
    ann: AnnClassifier
    bcfg: BaselineConfig


def symbol_energy(cfg: SystemConfig) -> float:
    """Per-antenna energy per channel use, equal to NeuroComm's average per-sample budget."""
    return 10.0 ** (cfg.snr_db / 10.0) * cfg.channel.N_0


def coded_inputs(rasters: Sequence[np.ndarray], plan: SubframePlan, coders: Sequence[TopKCoder]) -> list[np.ndarray]:
    """Per-device source-coded subframes ``[N, F, D_k, L_enc]`` as the receiver would see them."""
    out = []
    for u, coder in zip(rasters, coders):
        blocks = np.stack(subframe_pack(np.asarray(u), plan), axis=1)
        out.append(coder.decode(coder.encode(blocks)))
    return out


def build_baseline(
    rasters: Sequence[np.ndarray],
    labels: np.ndarray,
    cfg: SystemConfig,
    bcfg: BaselineConfig,
    seed: int = 0,
    code: LdpcCode | None = None,
) -> DigitalBaseline:
    """Construct (or adopt) the code, fit the source coders to it and train the ANN.

    The ANN sees source-coded subframes without channel errors.  With
    several devices each training subframe keeps a single random device,
    matching what a successful ALOHA round delivers.
    """
    plan = SubframePlan(cfg.L, bcfg.L_enc)
    if code is None:
        n = code_length(cfg.L_b, bcfg.L_enc, bcfg.d_c)
        code = regular_code(n, bcfg.d_v, bcfg.d_c, bcfg.code_seed, bcfg.bp_iters)
    elif code.n > cfg.L_b * bcfg.L_enc:
        raise ValueError(f"code length {code.n} exceeds the {cfg.L_b * bcfg.L_enc} channel uses per subframe")
    coders = [TopKCoder.fit(d, bcfg.L_enc, code.k) for d in cfg.D_u]
    blocks = coded_inputs(rasters, plan, coders)
    N = len(labels)
    present = None
    if cfg.K > 1:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
        present = np.eye(cfg.K)[rng.integers(0, cfg.K, (N, plan.F))]
    x = ann_input(blocks, present)
    ann, _ = train_ann(x, np.asarray(labels), bcfg, cfg.D_v, seed)
    return DigitalBaseline(plan, coders, code, ann, bcfg)


def evaluate_baseline(
    model: DigitalBaseline,
    rasters: Sequence[np.ndarray],
    labels: np.ndarray,
    cfg: SystemConfig,
    n_realizations: int = 300,
    seed: int = 0,
) -> MetricTrace:
    """Accuracy and cumulative energy per step, averaged over channel draws.

    A transmitting device spends ``N_T * E_sym`` per channel use on the
    ``n`` coded symbols of its subframe, spread evenly over the subframe's
    sensed steps.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    plan, code = model.plan, model.code
    labels = np.asarray(labels)
    N, K, L = len(labels), cfg.K, cfg.L
    E_sym = symbol_energy(cfg)
    payloads = []
    for u, coder in zip(rasters, model.coders):
        bits = coder.encode(np.stack(subframe_pack(np.asarray(u), plan), axis=1))  # [N, F, n_bits]
        info = np.zeros((N, plan.F, code.k), dtype=np.uint8)
        info[..., : coder.n_bits] = bits
        payloads.append(info)
    codewords = [code.encode(p) for p in payloads]
    block_energy = cfg.N_T * E_sym * code.n
    correct = np.zeros(L)
    energy = np.zeros(L)
    for _ in range(n_realizations):
        taps = sample_channel(cfg.channel, rng, batch=N)  # [N, K, N_R, N_T, L_h]
        tx, ok = aloha_round(K, model.bcfg.aloha_p, rng, rounds=N * plan.F)
        tx = tx.reshape(N, plan.F, K)
        ok = ok.reshape(N, plan.F, K)
        decisions = np.full((N, plan.F), -1, dtype=np.int64)
        for f in range(plan.F):
            for k in range(K):
                sel = np.flatnonzero(ok[:, f, k])
                if sel.size == 0:
                    continue
                llr = bpsk_chain(codewords[k][sel, f], taps[sel, k], cfg.channel.N_0, E_sym, rng)
                info, good, _ = code.decode(llr)
                blocks = [np.zeros((sel.size, d, plan.L_enc)) for d in cfg.D_u]
                blocks[k] = model.coders[k].decode(info)
                present = np.zeros((sel.size, K))
                present[:, k] = 1.0
                probs = model.ann.predict_proba(ann_input(blocks, present))
                dec = np.argmax(probs, axis=-1)
                decisions[sel[good], f] = dec[good]
        for i in range(N):
            subs = [None if d < 0 else int(d) for d in decisions[i]]
            correct += classify_aggregate(subs, plan, cfg.D_v) == labels[i]
        for f in range(plan.F):
            lo, hi = f * plan.L_enc, plan.boundary(f)
            per_step = tx[:, f, :].sum() * block_energy / (hi - lo)
            energy[lo:hi] += per_step
    frames = N * n_realizations
    return MetricTrace(
        accuracy=correct / frames,
        cumulative_energy=np.cumsum(energy / frames),
        enc_spikes=np.zeros(L),
        dec_spikes=np.zeros(L),
        regime="baseline",
        scheme="digital",
        seed=seed,
    )
