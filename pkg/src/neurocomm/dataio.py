"""Spike-raster datasets, sensor partitioning and the checkpoint container.

Event files are plain text, one ``time_bin,channel_index`` pair per line
(0-based).  A JSON manifest describes the raster geometry and lists the
files::

    {"rows": 26, "cols": 26, "L": 80, "classes": 2,
     "files": [{"path": "ev/0001.csv", "label": 0, "split": "train"}, ...]}

Checkpoints are a single-line JSON header followed by little-endian
float64 blobs in header order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np


class DataFormatError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["rows", "cols", "L", "classes", "files"],
    "additionalProperties": False,
    "properties": {
        "rows": {"type": "integer", "minimum": 1},
        "cols": {"type": "integer", "minimum": 1},
        "L": {"type": "integer", "minimum": 1},
        "classes": {"type": "integer", "minimum": 1},
        "files": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["path", "label", "split"],
                "additionalProperties": False,
                "properties": {
                    "path": {"type": "string"},
                    "label": {"type": "integer", "minimum": 0},
                    "split": {"enum": ["train", "test"]},
                },
            },
        },
    },
}


@dataclass
class Dataset:
    rasters: np.ndarray  # [N, D, L] uint8
    labels: np.ndarray  # [N] int
    n_classes: int
    rows: int
    cols: int
    split: np.ndarray | None = None  # [N] "train"/"test"

    def __post_init__(self):
        if self.rasters.ndim != 3 or len(self.rasters) != len(self.labels):
            raise DataFormatError("rasters must be [N, D, L] with one label each")
        if self.rows * self.cols != self.rasters.shape[1]:
            raise DataFormatError("rows * cols must equal the channel count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataFormatError("label out of range")

    def __len__(self):
        return len(self.labels)

    @property
    def D(self) -> int:
        return self.rasters.shape[1]

    @property
    def L(self) -> int:
        return self.rasters.shape[2]

    def subset(self, which) -> "Dataset":
        if isinstance(which, str):
            if self.split is None:
                raise ValueError("dataset carries no split labels")
            which = self.split == which
        split = None if self.split is None else self.split[which]
        return Dataset(self.rasters[which], self.labels[which], self.n_classes, self.rows, self.cols, split)


def read_event_file(path, D: int, L: int) -> np.ndarray:
    raster = np.zeros((D, L), dtype=np.uint8)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 'time_bin,channel_index'")
            try:
                t, ch = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer field") from None
            if not (0 <= t < L and 0 <= ch < D):
                raise DataFormatError(f"{path}:{lineno}: event ({t}, {ch}) out of range")
            raster[ch, t] = 1
    return raster


def load_events(manifest_path) -> Dataset:
    """Load a manifest and bin its events (OR semantics per channel and bin)."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
        raise DataFormatError(f"invalid manifest {manifest_path}: {exc}") from exc
    D = manifest["rows"] * manifest["cols"]
    L = manifest["L"]
    files = manifest["files"]
    rasters = np.zeros((len(files), D, L), dtype=np.uint8)
    for i, entry in enumerate(files):
        rasters[i] = read_event_file(manifest_path.parent / entry["path"], D, L)
    labels = np.array([f["label"] for f in files], dtype=np.int64)
    split = np.array([f["split"] for f in files])
    return Dataset(rasters, labels, manifest["classes"], manifest["rows"], manifest["cols"], split)


def write_events(ds: Dataset, out_dir, split_names=None) -> Path:
    """Export a dataset as event files plus manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "events").mkdir(parents=True, exist_ok=True)
    split = ds.split if split_names is None else split_names
    files = []
    for i in range(len(ds)):
        rel = f"events/{i:05d}.csv"
        ch, t = np.nonzero(ds.rasters[i])
        order = np.lexsort((ch, t))
        lines = "".join(f"{t[j]},{ch[j]}\n" for j in order)
        (out_dir / rel).write_text(lines)
        files.append({"path": rel, "label": int(ds.labels[i]), "split": str(split[i]) if split is not None else "train"})
    manifest = {"rows": ds.rows, "cols": ds.cols, "L": ds.L, "classes": ds.n_classes, "files": files}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


@dataclass(frozen=True)
class SensorSplit:
    """Row-major channel partition of an ``R x C`` sensor among ``K`` devices.

    Each device observes ``ceil(mu * R * C)`` consecutive channels: the first
    device starts at the top-left pixel, the last device ends at the
    bottom-right one, and any devices in between are spaced evenly.
    """

    K: int
    mu: float
    rows: int
    cols: int

    def __post_init__(self):
        if not (0 < self.mu <= 1):
            raise ValueError("mu must lie in (0, 1]")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    @property
    def D_u(self) -> int:
        return math.ceil(round(self.mu * self.rows * self.cols, 9))

    def channels(self) -> list[np.ndarray]:
        D = self.rows * self.cols
        n = self.D_u
        if self.K == 1:
            starts = [0]
        else:
            starts = [round(i * (D - n) / (self.K - 1)) for i in range(self.K)]
        return [np.arange(s, s + n) for s in starts]


def split_sensors(raster: np.ndarray, split: SensorSplit) -> list[np.ndarray]:
    """Per-device views of ``raster[..., R*C, L]``."""
    if raster.shape[-2] != split.rows * split.cols:
        raise ValueError("raster channel count does not match the sensor geometry")
    return [raster[..., idx, :] for idx in split.channels()]


def synth_dataset(
    D: int = 64,
    L: int = 40,
    classes: int = 2,
    sparsity: float = 0.05,
    jitter: int = 0,
    dropout: float = 0.0,
    n_per_class: int = 100,
    onset: int = 10,
    shared: float = 0.0,
    noise_rate: float = 0.0,
    rows: int | None = None,
    seed: int = 0,
) -> Dataset:
    """Class-prototype spike rasters with timing jitter and spike dropout.

    ``sparsity`` is the expected fraction of ones over the whole raster;
    all prototype spikes fall at or after ``onset``.  ``shared`` is the
    fraction of prototype spikes common to every class and ``noise_rate``
    the density of spurious spikes added after ``onset``.
    """
    if not (0 < sparsity < 1):
        raise ValueError("sparsity must lie in (0, 1)")
    if not (0 <= onset < L):
        raise ValueError("onset must lie in [0, L)")
    rng = np.random.default_rng(seed)
    active = L - onset
    density = min(sparsity * L / active, 1.0)
    common = rng.random((D, active)) < density
    protos = []
    for _ in range(classes):
        own = rng.random((D, active)) < density
        pick = rng.random((D, active)) < shared
        p = np.zeros((D, L), dtype=bool)
        p[:, onset:] = np.where(pick, common, own)
        protos.append(p)
    rasters, labels = [], []
    for c in range(classes):
        for _ in range(n_per_class):
            ch, t = np.nonzero(protos[c])
            keep = rng.random(ch.size) >= dropout
            shift = rng.integers(-jitter, jitter + 1, size=ch.size) if jitter else np.zeros(ch.size, dtype=int)
            t = np.clip(t + shift, onset, L - 1)
            r = np.zeros((D, L), dtype=np.uint8)
            r[ch[keep], t[keep]] = 1
            if noise_rate:
                r[:, onset:] |= (rng.random((D, active)) < noise_rate).astype(np.uint8)
            rasters.append(r)
            labels.append(c)
    if rows is None:
        rows = D
    return Dataset(np.stack(rasters), np.array(labels), classes, rows, D // rows)


def train_test_split(ds: Dataset, n_test_per_class: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    test = np.zeros(len(ds), dtype=bool)
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        test[rng.choice(idx, size=n_test_per_class, replace=False)] = True
    return ds.subset(~test), ds.subset(test)


# -- checkpoints ------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def save_checkpoint(path, tensors: dict[str, np.ndarray], metadata: dict) -> None:
    """Write ``tensors`` (float64; complex arrays are stored as ``[..., 2]``)."""
    entries, blobs = [], []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if np.iscomplexobj(arr):
            arr = np.stack([arr.real, arr.imag], axis=-1)
            kind = "complex"
        else:
            kind = "real"
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "kind": kind})
        blobs.append(blob)
    payload = b"".join(blobs)
    header = {
        "format": "neurocomm-checkpoint",
        "version": 1,
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "metadata": metadata,
    }
    Path(path).write_bytes(canonical_json(header).encode() + b"\n" + payload)


def load_checkpoint(path, expected_config_hash: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing header")
    try:
        header = json.loads(data[:nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    if header.get("format") != "neurocomm-checkpoint":
        raise CheckpointError("not a neurocomm checkpoint")
    payload = data[nl + 1:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("payload hash mismatch")
    expected = sum(8 * math.prod(e["shape"]) for e in header["tensors"])
    if expected != len(payload):
        raise CheckpointError(f"shape manifest implies {expected} bytes, payload has {len(payload)}")
    meta = header["metadata"]
    if expected_config_hash is not None and meta.get("config_hash") != expected_config_hash:
        raise CheckpointError("config hash mismatch")
    tensors, off = {}, 0
    for e in header["tensors"]:
        n = 8 * math.prod(e["shape"])
        arr = np.frombuffer(payload[off:off + n], dtype="<f8").reshape(e["shape"]).astype(np.float64)
        if e["kind"] == "complex":
            arr = arr[..., 0] + 1j * arr[..., 1]
        tensors[e["name"]] = arr
        off += n
    return tensors, meta
