"""Per-time-step metric traces and their CSV/JSON forms."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

TRACE_COLUMNS = ("l", "accuracy", "cumulative_energy", "enc_spikes", "dec_spikes", "regime", "scheme", "seed", "config_hash")


@dataclass
class MetricTrace:
    accuracy: np.ndarray  # [L]
    cumulative_energy: np.ndarray  # [L]
    enc_spikes: np.ndarray  # [L] cumulative mean encoder spikes per frame
    dec_spikes: np.ndarray  # [L] cumulative mean decoder spikes per frame
    regime: str = ""
    scheme: str = ""
    seed: int = 0
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return len(self.accuracy)

    @property
    def final_accuracy(self) -> float:
        return float(self.accuracy[-1])

    def time_to_accuracy(self, target: float) -> int | None:
        """Smallest 1-based step whose accuracy reaches ``target``."""
        hit = np.flatnonzero(self.accuracy >= target)
        return int(hit[0]) + 1 if hit.size else None

    def rows(self):
        for i in range(self.L):
            yield (
                i + 1,
                float(self.accuracy[i]),
                float(self.cumulative_energy[i]),
                float(self.enc_spikes[i]),
                float(self.dec_spikes[i]),
                self.regime,
                self.scheme,
                self.seed,
                self.config_hash,
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows():
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
        return buf.getvalue()

    def to_json(self) -> str:
        d = {
            "regime": self.regime,
            "scheme": self.scheme,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "accuracy": self.accuracy.tolist(),
            "cumulative_energy": self.cumulative_energy.tolist(),
            "enc_spikes": self.enc_spikes.tolist(),
            "dec_spikes": self.dec_spikes.tolist(),
            "extra": self.extra,
        }
        return json.dumps(d, sort_keys=True, indent=1)

    @classmethod
    def from_csv(cls, text: str) -> "MetricTrace":
        rows = list(csv.reader(io.StringIO(text)))
        validate_trace_rows(rows)
        body = rows[1:]
        col = lambda j: np.array([float(r[j]) for r in body])
        first = body[0]
        return cls(col(1), col(2), col(3), col(4), first[5], first[6], int(first[7]), first[8])


def validate_trace_rows(rows) -> None:
    """Check header, column types and the monotone-step / monotone-energy invariants."""
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError("trace header does not match the declared columns")
    prev_l, prev_e = 0, -np.inf
    for r in rows[1:]:
        if len(r) != len(TRACE_COLUMNS):
            raise ValueError(f"row has {len(r)} fields")
        l, acc, energy = int(r[0]), float(r[1]), float(r[2])
        float(r[3]), float(r[4]), int(r[7])
        if l <= prev_l:
            raise ValueError("step column must be strictly increasing")
        if not 0.0 <= acc <= 1.0:
            raise ValueError("accuracy outside [0, 1]")
        if energy < prev_e:
            raise ValueError("cumulative energy decreased")
        prev_l, prev_e = l, energy
