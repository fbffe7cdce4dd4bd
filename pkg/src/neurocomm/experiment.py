"""Config-driven runs: data preparation, training, evaluation and sweep points."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baseline as bl
from .config import build_baseline_config, build_system, build_train, hash_of, sensor_split
from .dataio import Dataset, load_events, synth_dataset, train_test_split
from .ldpc import LdpcCode, read_alist
from .metrics import MetricTrace
from .system import calibrate_init, init_params
from .trainer import device_inputs, evaluate, per_channel_evaluate, train


@dataclass
class Data:
    train: Dataset
    test: Dataset
    channels: list[np.ndarray]  # sensor indices per device


def load_data(cfg: dict) -> Data:
    d = cfg["data"]
    if d["source"] == "manifest":
        if not d["manifest"]:
            raise ValueError("data.source is 'manifest' but data.manifest is unset")
        ds = load_events(d["manifest"])
        if ds.D != d["D"] or ds.L != d["L"]:
            raise ValueError(f"dataset geometry {ds.D}x{ds.L} disagrees with config {d['D']}x{d['L']}")
        tr, te = ds.subset(ds.split == "train"), ds.subset(ds.split == "test")
    else:
        ds = synth_dataset(
            D=d["D"], L=d["L"], classes=d["classes"], sparsity=d["sparsity"], jitter=d["jitter"],
            dropout=d["dropout"], n_per_class=d["n_per_class"] + d["n_test_per_class"], onset=d["onset"],
            shared=d["shared"], noise_rate=d["noise_rate"], rows=d["rows"], seed=d["seed"],
        )
        tr, te = train_test_split(ds, d["n_test_per_class"], seed=d["seed"])
    return Data(tr, te, sensor_split(cfg).channels())


def initial_params(cfg: dict, data: Data, seed: int) -> dict:
    """Seeded initialization followed by the data-driven potential calibration."""
    sysc = build_system(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    params = init_params(sysc, rng)
    std = cfg["training"]["init_target_std"]
    if std is not None:
        n = min(cfg["training"]["calibration_batch"], len(data.train))
        inputs = device_inputs(data.train.rasters[:n], data.channels)
        params = calibrate_init(params, sysc, inputs, rng, std, cfg["training"]["init_out_mean"])
    return params


def run_train(cfg: dict, seed: int, regime: str | None = None, data: Data | None = None, log=None):
    """Train from scratch; returns ``(params, losses)``."""
    data = data or load_data(cfg)
    sysc = build_system(cfg)
    tcfg = build_train(cfg, seed, regime)
    params = initial_params(cfg, data, seed)
    return train(params, data.train.rasters, data.train.labels, sysc, tcfg, channels=data.channels, on_step=log)


def run_eval(cfg: dict, params: dict, seed: int, regime: str, data: Data | None = None) -> MetricTrace:
    data = data or load_data(cfg)
    sysc = build_system(cfg)
    ev = cfg["evaluation"]
    if regime == "per_channel":
        tcfg = build_train(cfg, seed, "per_channel")
        tcfg = type(tcfg)(**{**tcfg.__dict__, "steps": ev["per_channel_steps"]})
        trace = per_channel_evaluate(
            params, data.train.rasters, data.train.labels, data.test.rasters, data.test.labels, sysc, tcfg,
            n_draws=ev["per_channel_draws"], n_realizations=max(1, ev["n_realizations"] // ev["per_channel_draws"]),
            channels=data.channels,
        )
    else:
        trace = evaluate(params, data.test.rasters, data.test.labels, sysc, regime, ev["n_realizations"], seed, data.channels)
    trace.config_hash = hash_of(cfg)
    return trace


def load_code(cfg: dict) -> LdpcCode | None:
    path = cfg["baseline"]["alist"]
    if not path:
        return None
    H = read_alist(Path(path).read_text())
    return LdpcCode(H, k=H.shape[1] - H.shape[0], max_iters=cfg["baseline"]["bp_iters"])


def run_baseline(cfg: dict, seed: int, data: Data | None = None) -> MetricTrace:
    data = data or load_data(cfg)
    sysc = build_system(cfg)
    bcfg = build_baseline_config(cfg)
    views = lambda ds: [ds.rasters[:, idx, :] for idx in data.channels]
    model = bl.build_baseline(views(data.train), data.train.labels, sysc, bcfg, seed, code=load_code(cfg))
    trace = bl.evaluate_baseline(model, views(data.test), data.test.labels, sysc, cfg["evaluation"]["n_realizations"], seed)
    trace.config_hash = hash_of(cfg)
    return trace


def apply_axis(cfg: dict, axis: str, value) -> dict:
    out = copy.deepcopy(cfg)
    if axis == "L_b":
        if value != int(value) or value < 1:
            raise ValueError(f"L_b sweep values must be positive integers, got {value}")
        out["modulation"]["L_b"] = int(value)
    elif axis == "mu":
        out["devices"]["mu"] = float(value)
    elif axis == "snr":
        out["energy"]["snr_db"] = float(value)
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    return out


def point_config(cfg: dict, axis: str, value, scheme: str) -> dict:
    out = apply_axis(cfg, axis, value)
    out["modulation"]["scheme"] = scheme
    return out


def run_point(cfg: dict, seed: int, regime: str) -> MetricTrace:
    """Train (if needed) and evaluate one configuration for one regime."""
    data = load_data(cfg)
    if regime == "baseline":
        return run_baseline(cfg, seed, data)
    train_regime = "hyper" if regime == "per_channel" else regime
    params, _ = run_train(cfg, seed, train_regime, data)
    return run_eval(cfg, params, seed, regime, data)


def summarize(trace: MetricTrace, target: float) -> dict:
    tta = trace.time_to_accuracy(target)
    return {
        "final_accuracy": trace.final_accuracy,
        "time_to_target": tta,
        "final_energy": float(trace.cumulative_energy[-1]),
        "target_accuracy": target,
    }
