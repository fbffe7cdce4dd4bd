"""Experiment configuration: JSON schema, defaults and builders for the typed configs.

A config is a JSON object with the sections below; every section and key
is optional and falls back to ``DEFAULTS``.  Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .baseline import BaselineConfig
from .channel import ChannelConfig
from .dataio import SensorSplit, config_hash
from .snn import NeuronConfig
from .system import SystemConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Config file is unreadable or fails validation."""


DEFAULTS = {
    "data": {
        "source": "synthetic",
        "manifest": None,
        "D": 64,
        "L": 40,
        "classes": 2,
        "sparsity": 0.05,
        "jitter": 2,
        "dropout": 0.3,
        "onset": 10,
        "shared": 0.0,
        "noise_rate": 0.0,
        "n_per_class": 150,
        "n_test_per_class": 50,
        "rows": None,
        "seed": 1,
    },
    "devices": {"K": 1, "mu": 1.0},
    "channel": {
        "N_T": 10,
        "N_R": 20,
        "delay_taps": [0, 1, 2, 3, 4],
        "power_profile": [0.2, 0.2, 0.2, 0.2, 0.2],
        "N_0": 1.0,
    },
    "neuron": {
        "tau_mem": 20.0,
        "tau_syn": 5.0,
        "tau_ref": 1.0,
        "threshold": 1.0,
        "feedback_sign": -1,
        "surrogate_slope": 5.0,
        "filter_truncation": 40,
    },
    "modulation": {"scheme": "LTH", "L_b": 4, "amplitude_gain": 3.0},
    "network": {"enc_hidden": 128, "dec_hidden": 128, "hyper_hidden": 1024, "L_p": 64, "rx_gain": 1.0},
    "energy": {"snr_db": 10.0, "constraint": "per_frame"},
    "training": {
        "regime": "hyper",
        "learning_rate": 1e-4,
        "batch_size": 16,
        "steps": None,
        "channel_draws": 1000,
        "loss_horizon": "final_step",
        "momentum": 0.9,
        "grad_clip": None,
        "init_target_std": 0.5,
        "init_out_mean": 0.3,
        "calibration_batch": 32,
    },
    "evaluation": {
        "n_realizations": 300,
        "target_accuracy": 0.8,
        "per_channel_draws": 5,
        "per_channel_steps": 100,
    },
    "baseline": {
        "L_enc": 20,
        "d_v": 3,
        "d_c": 9,
        "bp_iters": 50,
        "code_seed": 0,
        "aloha_p": 0.5,
        "ann_hidden": 512,
        "learning_rate": 0.01,
        "batch_size": 32,
        "steps": 1000,
        "alist": None,
    },
    "sweep": {"axis": "L_b", "values": [4], "schemes": ["LTH"], "regimes": ["hyper"]},
    "seeds": [0],
}

_num = {"type": "number"}
_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nn = {"type": "number", "minimum": 0}


def _section(props: dict, extra: dict | None = None) -> dict:
    s = {"type": "object", "additionalProperties": False, "properties": props}
    if extra:
        s.update(extra)
    return s


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "data": _section({
            "source": {"enum": ["synthetic", "manifest"]},
            "manifest": {"type": ["string", "null"]},
            "D": _pos_int,
            "L": _pos_int,
            "classes": {"type": "integer", "minimum": 2},
            "sparsity": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "jitter": {"type": "integer", "minimum": 0},
            "dropout": {"type": "number", "minimum": 0, "maximum": 1},
            "onset": {"type": "integer", "minimum": 0},
            "shared": {"type": "number", "minimum": 0, "maximum": 1},
            "noise_rate": {"type": "number", "minimum": 0, "maximum": 1},
            "n_per_class": _pos_int,
            "n_test_per_class": _pos_int,
            "rows": {"type": ["integer", "null"], "minimum": 1},
            "seed": _int,
        }),
        "devices": _section({"K": _pos_int, "mu": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}),
        "channel": _section({
            "N_T": _pos_int,
            "N_R": _pos_int,
            "delay_taps": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            "power_profile": {"type": "array", "items": _pos, "minItems": 1},
            "N_0": _nn,
        }),
        "neuron": _section({
            "tau_mem": _pos,
            "tau_syn": _pos,
            "tau_ref": _pos,
            "threshold": _pos,
            "feedback_sign": {"enum": [-1, 1]},
            "surrogate_slope": _pos,
            "filter_truncation": _pos_int,
        }),
        "modulation": _section({"scheme": {"enum": ["TH", "LTH"]}, "L_b": _pos_int, "amplitude_gain": _pos}),
        "network": _section({
            "enc_hidden": _pos_int,
            "dec_hidden": _pos_int,
            "hyper_hidden": _pos_int,
            "L_p": _pos_int,
            "rx_gain": {"type": ["number", "null"], "exclusiveMinimum": 0},
        }),
        "energy": _section({"snr_db": _num, "constraint": {"enum": ["per_frame", "per_symbol"]}}),
        "training": _section({
            "regime": {"enum": ["hyper", "joint", "per_channel"]},
            "learning_rate": _pos,
            "batch_size": _pos_int,
            "steps": {"type": ["integer", "null"], "minimum": 0},
            "channel_draws": _pos_int,
            "loss_horizon": {"enum": ["final_step", "all_steps"]},
            "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "grad_clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "init_target_std": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "init_out_mean": {"type": ["number", "null"]},
            "calibration_batch": _pos_int,
        }),
        "evaluation": _section({
            "n_realizations": _pos_int,
            "target_accuracy": {"type": "number", "minimum": 0, "maximum": 1},
            "per_channel_draws": _pos_int,
            "per_channel_steps": {"type": "integer", "minimum": 0},
        }),
        "baseline": _section({
            "L_enc": _pos_int,
            "d_v": _pos_int,
            "d_c": _pos_int,
            "bp_iters": {"type": "integer", "minimum": 0},
            "code_seed": _int,
            "aloha_p": {"type": "number", "minimum": 0, "maximum": 1},
            "ann_hidden": _pos_int,
            "learning_rate": _nn,
            "batch_size": _pos_int,
            "steps": {"type": "integer", "minimum": 0},
            "alist": {"type": ["string", "null"]},
        }),
        "sweep": _section({
            "axis": {"enum": ["L_b", "mu", "snr"]},
            "values": {"type": "array", "items": _num, "minItems": 1},
            "schemes": {"type": "array", "items": {"enum": ["TH", "LTH"]}, "minItems": 1},
            "regimes": {"type": "array", "items": {"enum": ["hyper", "joint", "per_channel", "baseline"]}, "minItems": 1},
        }),
        "seeds": {"type": "array", "items": _int, "minItems": 1},
    },
}


def merge_defaults(cfg: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for section, value in cfg.items():
        if isinstance(value, dict):
            out[section].update(value)
        else:
            out[section] = value
    return out


def validate(cfg: dict) -> dict:
    """Schema-check a user config and return it merged with the defaults."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    full = merge_defaults(cfg)
    try:
        build_system(full)
        build_train(full)
        build_baseline_config(full)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return full


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return validate(raw)


def sensor_split(cfg: dict) -> SensorSplit:
    d = cfg["data"]
    rows = d["rows"] or d["D"]
    if d["D"] % rows:
        raise ValueError(f"D={d['D']} is not divisible by rows={rows}")
    return SensorSplit(cfg["devices"]["K"], cfg["devices"]["mu"], rows, d["D"] // rows)


def build_system(cfg: dict) -> SystemConfig:
    ch = cfg["channel"]
    split = sensor_split(cfg)
    channel = ChannelConfig(
        K=cfg["devices"]["K"],
        N_T=ch["N_T"],
        N_R=ch["N_R"],
        delay_taps=tuple(ch["delay_taps"]),
        power_profile=tuple(ch["power_profile"]),
        N_0=ch["N_0"],
    )
    net, mod = cfg["network"], cfg["modulation"]
    return SystemConfig(
        D_u=(split.D_u,) * split.K,
        D_v=cfg["data"]["classes"],
        L=cfg["data"]["L"],
        L_b=mod["L_b"],
        scheme=mod["scheme"],
        enc_hidden=net["enc_hidden"],
        dec_hidden=net["dec_hidden"],
        hyper_hidden=net["hyper_hidden"],
        L_p=net["L_p"],
        snr_db=cfg["energy"]["snr_db"],
        constraint=cfg["energy"]["constraint"],
        amplitude_gain=mod["amplitude_gain"],
        rx_gain=net["rx_gain"],
        channel=channel,
        neuron=NeuronConfig(**cfg["neuron"]),
    )


def build_train(cfg: dict, seed: int = 0, regime: str | None = None) -> TrainConfig:
    t = cfg["training"]
    return TrainConfig(
        learning_rate=t["learning_rate"],
        batch_size=t["batch_size"],
        steps=t["steps"],
        channel_draws=t["channel_draws"],
        regime=regime or t["regime"],
        seed=seed,
        loss_horizon=t["loss_horizon"],
        momentum=t["momentum"],
        grad_clip=t["grad_clip"],
    )


def build_baseline_config(cfg: dict) -> BaselineConfig:
    b = {k: v for k, v in cfg["baseline"].items() if k != "alist"}
    return BaselineConfig(**b)


def hash_of(cfg: dict) -> str:
    return config_hash(cfg)
