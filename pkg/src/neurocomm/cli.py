"""Command-line experiment runner.

    neurocomm train      --config cfg.json [--seed S] [--regime R] [--scheme S] --out DIR
    neurocomm eval       --config cfg.json [--checkpoint FILE] [--regime R] --out DIR
    neurocomm sweep      --config cfg.json --out DIR
    neurocomm gradcheck  [--config cfg.json] [--out DIR]
    neurocomm synth-data --config cfg.json --out DIR

Exit codes: 0 success, 2 invalid input (config, data, checkpoint),
3 numeric failure (non-finite training values, failed gradient check).
The worker count for sweeps is read from ``NEUROCOMM_WORKERS``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import experiment as ex
from .config import ConfigError, build_system, hash_of, load_config, validate
from .dataio import CheckpointError, DataFormatError, Dataset, load_checkpoint, save_checkpoint, write_events
from .metrics import MetricTrace
from .system import init_params
from .trainer import NumericError, grad_check, grad_check_params

log = logging.getLogger("neurocomm")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
GRADCHECK_TOL = 1e-4
SWEEP_COLUMNS = (
    "axis", "value", "regime", "scheme", "seed", "final_accuracy", "time_to_target",
    "final_energy", "config_hash", "base_hash",
)

# Tiny pipeline used by `gradcheck` when no config is given.
GRADCHECK_CONFIG = {
    "data": {"D": 4, "L": 8, "classes": 2},
    "channel": {"N_T": 2, "N_R": 2},
    "modulation": {"scheme": "LTH", "L_b": 2},
    "network": {"enc_hidden": 3, "dec_hidden": 3, "hyper_hidden": 3, "L_p": 2},
}


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = json.loads(json.dumps(cfg))
    if getattr(args, "regime", None) and args.regime != "baseline":
        cfg["training"]["regime"] = args.regime
    if getattr(args, "scheme", None):
        cfg["modulation"]["scheme"] = args.scheme
    return validate(cfg)


def _seed(cfg: dict, args) -> int:
    return args.seed if args.seed is not None else cfg["seeds"][0]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_trace(trace: MetricTrace, out: Path, stem: str) -> None:
    (out / f"{stem}.csv").write_text(trace.to_csv())
    (out / f"{stem}.json").write_text(trace.to_json())


def cmd_train(args) -> int:
    if args.regime == "baseline":
        raise ConfigError("the digital baseline is trained inside `eval --regime baseline`")
    cfg = _apply_overrides(load_config(args.config), args)
    seed = _seed(cfg, args)
    out = _out(args)
    regime = cfg["training"]["regime"]
    chash = hash_of(cfg)
    records = []

    def on_step(rec):
        records.append({"step": rec["step"], "loss": rec["loss"]})

    t0 = time.perf_counter()
    params, _ = ex.run_train(cfg, seed, regime, log=on_step)
    wall = time.perf_counter() - t0
    trainable = sorted(n for n in params if regime == "hyper" or n.startswith(("enc", "dec")))
    meta = {"config_hash": chash, "config": cfg, "seed": seed, "regime": regime, "trainable": trainable}
    save_checkpoint(out / "checkpoint.bin", params, meta)
    with open(out / "train_log.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    summary = {"config_hash": chash, "seed": seed, "regime": regime, "steps": len(records),
               "final_loss": records[-1]["loss"] if records else None, "wall_time": wall}
    (out / "train_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    log.info("trained %s for %d steps in %.1f s", regime, len(records), wall)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    seed = _seed(cfg, args)
    out = _out(args)
    regime = args.regime or cfg["training"]["regime"]
    data = ex.load_data(cfg)
    if regime == "baseline":
        trace = ex.run_baseline(cfg, seed, data)
    else:
        if args.checkpoint:
            params, meta = load_checkpoint(args.checkpoint)
            expected = init_params(build_system(cfg), np.random.default_rng(0))
            bad = [n for n in expected if n not in params or params[n].shape != expected[n].shape]
            if bad:
                raise CheckpointError(f"checkpoint does not fit the configured model: {bad}")
        else:
            train_regime = "hyper" if regime == "per_channel" else regime
            params, _ = ex.run_train(cfg, seed, train_regime, data)
        trace = ex.run_eval(cfg, params, seed, regime, data)
    trace.config_hash = hash_of(cfg)
    write_trace(trace, out, f"trace_{regime}_{trace.scheme}")
    summary = ex.summarize(trace, cfg["evaluation"]["target_accuracy"])
    summary.update(regime=regime, scheme=trace.scheme, seed=seed, config_hash=trace.config_hash)
    (out / f"summary_{regime}_{trace.scheme}.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _sweep_task(task):
    cfg, axis, value, regime, scheme, seed = task
    pcfg = validate(ex.point_config(cfg, axis, value, scheme))
    trace = ex.run_point(pcfg, seed, regime)
    trace.config_hash = hash_of(pcfg)
    return task[1:], trace


def aggregate(points: Path, base_hash: str) -> list[dict]:
    """Merge every point summary in ``points``.

    Refuses to merge a summary written under a different base config, so a
    stale output directory can never leak into a new sweep table.
    """
    rows = []
    for path in sorted(points.glob("*.summary.json")):
        r = json.loads(path.read_text())
        if r.get("base_hash") != base_hash:
            raise ValueError(f"{path.name} was produced by config {str(r.get('base_hash'))[:12]}, "
                             f"expected {base_hash[:12]}")
        rows.append(r)
    key = lambda r: (r["regime"], r["scheme"], float(r["value"]), int(r["seed"]))
    return sorted(rows, key=key)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = _out(args)
    sw = cfg["sweep"]
    seeds = [args.seed] if args.seed is not None else cfg["seeds"]
    schemes = [args.scheme] if args.scheme else sw["schemes"]
    regimes = [args.regime] if args.regime else sw["regimes"]
    base_hash = hash_of(cfg)
    tasks = [(cfg, sw["axis"], v, r, s, seed) for v in sw["values"] for r in regimes for s in schemes for seed in seeds]
    for t in tasks:  # fail fast on invalid points before any training
        validate(ex.point_config(cfg, t[1], t[2], t[4]))
    workers = int(os.environ.get("NEUROCOMM_WORKERS", "1") or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    points = out / "points"
    points.mkdir(exist_ok=True)
    target = cfg["evaluation"]["target_accuracy"]
    for (axis, value, regime, scheme, seed), trace in results:
        stem = f"{axis}={value:g}_{regime}_{scheme}_seed{seed}"
        write_trace(trace, points, stem)
        s = ex.summarize(trace, target)
        row = {
            "axis": axis, "value": value, "regime": regime, "scheme": scheme, "seed": seed,
            "final_accuracy": s["final_accuracy"], "time_to_target": s["time_to_target"],
            "final_energy": s["final_energy"], "config_hash": trace.config_hash, "base_hash": base_hash,
        }
        (points / f"{stem}.summary.json").write_text(json.dumps(row, sort_keys=True, indent=1))
    rows = aggregate(points, base_hash)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in SWEEP_COLUMNS})
    (out / "sweep.json").write_text(json.dumps({"base_hash": base_hash, "axis": sw["axis"], "rows": rows},
                                               sort_keys=True, indent=1))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config) if args.config else validate(GRADCHECK_CONFIG)
    cfg = _apply_overrides(cfg, args)
    seed = _seed(cfg, args)
    sysc = build_system(cfg)
    params = grad_check_params(sysc, seed)
    regime = cfg["training"]["regime"]
    t0 = time.perf_counter()
    rep = grad_check(params, sysc, regime="hyper" if regime == "per_channel" else regime, seed=seed)
    report = {
        "max_rel_error": rep.max_error,
        "worst": rep.worst,
        "errors": rep.errors,
        "tolerance": GRADCHECK_TOL,
        "passed": rep.max_error <= GRADCHECK_TOL,
        "wall_time": time.perf_counter() - t0,
        "config_hash": hash_of(cfg),
    }
    text = json.dumps(report, sort_keys=True, indent=1)
    if args.out:
        (_out(args) / "gradcheck.json").write_text(text)
    print(text)
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


def cmd_synth_data(args) -> int:
    cfg = load_config(args.config)
    if cfg["data"]["source"] != "synthetic":
        raise ConfigError("synth-data needs data.source = 'synthetic'")
    data = ex.load_data(cfg)
    out = _out(args)
    ds = Dataset(
        np.concatenate([data.train.rasters, data.test.rasters]),
        np.concatenate([data.train.labels, data.test.labels]),
        data.train.n_classes, data.train.rows, data.train.cols,
    )
    split = np.array(["train"] * len(data.train) + ["test"] * len(data.test))
    path = write_events(ds, out, split)
    print(str(path))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neurocomm", description="Spiking semantic-communication experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    regimes = ["hyper", "joint", "per_channel", "baseline"]

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--regime", choices=regimes, default=None)
        p.add_argument("--scheme", choices=["TH", "LTH"], default=None)
        return p

    p = common(sub.add_parser("train", help="train one regime and write a checkpoint"))
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("eval", help="evaluate per-step accuracy and energy traces"))
    p.add_argument("--checkpoint", default=None, help="trained model (trained on the fly when omitted)")
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("sweep", help="run the configured sweep and aggregate final accuracies"))
    p.set_defaults(func=cmd_sweep)
    p = common(sub.add_parser("gradcheck", help="compare surrogate gradients with finite differences"), False)
    p.set_defaults(func=cmd_gradcheck)
    p = common(sub.add_parser("synth-data", help="export the synthetic dataset as event files"))
    p.set_defaults(func=cmd_synth_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command in ("train", "eval", "sweep", "synth-data") and not args.out:
        print(f"neurocomm {args.command}: --out is required", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, CheckpointError, ValueError, OSError) as exc:
        print(f"neurocomm: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericError, FloatingPointError) as exc:
        print(f"neurocomm: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
