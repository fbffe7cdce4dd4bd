"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the report lines.
"""

import copy
import functools
import json
import time

import numpy as np
import pytest

from neurocomm import baseline as bl
from neurocomm import cli
from neurocomm import experiment as ex
from neurocomm.channel import ChannelConfig, sample_channel, transmit_mac
from neurocomm.config import build_system, validate
from neurocomm.hypernet import decide, modulate_weights, rate_decode
from neurocomm.modem import th_modulate
from neurocomm.snn import NeuronConfig, snn_forward
from neurocomm.system import FrameNoise, forward_pipeline
from neurocomm.trainer import evaluate, grad_check, grad_check_params

# Synthetic two-class task used by the trend criteria.
TREND = {
    "data": {"D": 64, "L": 40, "classes": 2, "onset": 10, "n_per_class": 150, "n_test_per_class": 50},
    "devices": {"K": 1},
    "channel": {"N_T": 4, "N_R": 4},
    "modulation": {"scheme": "LTH", "L_b": 4},
    "network": {"enc_hidden": 64, "dec_hidden": 64, "hyper_hidden": 64, "L_p": 16, "rx_gain": 1.0},
    "energy": {"snr_db": 10.0},
    "training": {"steps": 500, "learning_rate": 1e-4, "batch_size": 16, "init_out_mean": 0.3},
    "evaluation": {"n_realizations": 5, "per_channel_draws": 3, "per_channel_steps": 100},
}


def report(n, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def trend_config(**over):
    cfg = copy.deepcopy(TREND)
    for section, values in over.items():
        cfg[section] = {**cfg.get(section, {}), **values}
    return validate(cfg)


@functools.lru_cache(maxsize=None)
def trend_runs(L_b: int = 4, scheme: str = "LTH", seeds: int = 10, per_channel: bool = True):
    """Train hyper and joint per seed; returns per-regime lists of traces."""
    cfg = trend_config(modulation={"L_b": L_b, "scheme": scheme})
    data = ex.load_data(cfg)
    out = {"hyper": [], "joint": [], "per_channel": []}
    for seed in range(seeds):
        for regime in ("hyper", "joint") if per_channel else ("hyper",):
            params, _ = ex.run_train(cfg, seed, regime, data)
            out[regime].append(ex.run_eval(cfg, params, seed, regime, data))
            if regime == "hyper" and per_channel:
                out["per_channel"].append(ex.run_eval(cfg, params, seed, "per_channel", data))
    return out


def mean_final(traces):
    return float(np.mean([t.final_accuracy for t in traces]))


def test_criterion_01_gradient_fidelity():
    t0 = time.perf_counter()
    cfg = build_system(validate(cli.GRADCHECK_CONFIG))
    assert (cfg.N_T, cfg.N_R, cfg.D_u, cfg.enc_hidden, cfg.L, cfg.L_b) == (2, 2, (4,), 3, 8, 2)
    rep = grad_check(grad_check_params(cfg, 0), cfg, regime="hyper", seed=0, step=1e-5)
    wall = time.perf_counter() - t0
    smallest = min(rep.magnitudes[n] for n in ("enc0.0", "enc0.1", "dec.0", "dec.1", "hyper.W2", "pilot0"))
    ok = rep.max_error <= 1e-4 and wall < 60 and smallest > 1e-6
    report(1, ok, f"max rel error {rep.max_error:.2e} ({rep.worst}), smallest grad {smallest:.1e}, {wall:.1f} s")


def test_criterion_02_channel_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        ch = ChannelConfig(K=int(rng.integers(1, 3)), N_T=int(rng.integers(1, 3)), N_R=int(rng.integers(1, 3)))
        taps = sample_channel(ch, rng)
        T = int(rng.integers(5, 30))
        frames = [rng.standard_normal((ch.N_T, T)) for _ in range(ch.K)]
        noise = np.sqrt(0.5) * (rng.standard_normal((ch.N_R, T)) + 1j * rng.standard_normal((ch.N_R, T)))
        y = transmit_mac(taps, frames, ch.N_0, noise=noise)
        ref = noise.copy()
        for k in range(ch.K):
            for r in range(ch.N_R):
                for t in range(T):
                    for m in range(ch.N_T):
                        for d in range(ch.L_h):
                            if t >= d:
                                ref[r, t] += taps[k, r, m, d] * frames[k][m, t - d]
        worst = max(worst, float(np.max(np.abs(y - ref))))
    wall = time.perf_counter() - t0
    report(2, worst <= 1e-12 and wall < 10, f"max abs error {worst:.1e} over 100 instances, {wall:.2f} s")


def test_criterion_03_time_hopping_counts():
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(1000):
        L_b = int(rng.integers(1, 9))
        x = (rng.random((int(rng.integers(1, 5)), int(rng.integers(1, 30)))) < rng.random()).astype(float)
        s, _ = th_modulate(x, L_b, rng=rng)
        blocks = s.reshape(x.shape + (L_b,))
        bad += int(not np.array_equal(blocks.sum(-1), x) or s.sum() != x.sum())
    report(3, bad == 0, f"{bad} of 1000 rasters violated the per-block count")


def test_criterion_04_silence_costs_nothing():
    cfg = trend_config()
    sysc = build_system(cfg)
    rng = np.random.default_rng(4)
    data = ex.load_data(cfg)
    params = ex.initial_params(cfg, data, 0)
    taps = sample_channel(sysc.channel, rng, batch=4)
    out = forward_pipeline(params, sysc, [np.zeros((4, 64, 40))], taps, FrameNoise.sample(sysc, 4, rng))
    hidden = out.cache["enc_tapes"][0].layers[0].spikes
    silent = not hidden.any() and not out.enc_spikes[0].any() and float(np.sum(out.tx[0] ** 2)) == 0.0
    assert not data.test.rasters[:, :, :10].any()
    tr = evaluate(params, data.test.rasters, data.test.labels, sysc, "hyper", n_realizations=2, seed=0)
    pre = tr.cumulative_energy[:10]
    ok = silent and np.all(pre == 0.0) and tr.cumulative_energy[-1] > 0
    report(4, ok, f"zero input silent={silent}; energy before onset max {pre.max():.1f}, final {tr.cumulative_energy[-1]:.1f}")


def test_criterion_05_hypernetwork_identity():
    rng = np.random.default_rng(5)
    base = [rng.normal(0, 1.5, (16, 24)), rng.normal(0, 1.5, (3, 16))]
    ybar = rng.standard_normal((8, 24, 30))
    cfg = NeuronConfig()
    plain, _ = snn_forward(base, ybar, cfg)
    mod, _ = snn_forward(modulate_weights(base, [np.ones(24), np.ones(16)]), ybar, cfg)
    exact = np.array_equal(plain, mod)
    worst = 0.0
    for _ in range(100):
        w = rng.standard_normal((int(rng.integers(1, 20)), int(rng.integers(1, 20))))
        s = rng.standard_normal(w.shape[1])
        worst = max(worst, float(np.max(np.abs(modulate_weights([w], [s])[0] - w @ np.diag(s)))))
    report(5, exact and worst <= 1e-14, f"identity bit-exact={exact}, max |diag oracle diff| {worst:.1e}")


def test_criterion_06_rate_decoding():
    rng = np.random.default_rng(6)
    worst, mismatch = 0.0, 0
    for _ in range(1000):
        D_v = int(rng.integers(2, 11))
        v = (rng.random((D_v, int(rng.integers(1, 50)))) < rng.random()).astype(float)
        p = rate_decode(v)
        worst = max(worst, abs(float(p.sum()) - 1.0))
        counts = v.sum(-1)
        mismatch += int(decide(p) != int(np.flatnonzero(counts == counts.max())[0]))
    report(6, worst <= 1e-12 and mismatch == 0, f"max |sum-1| {worst:.1e}, argmax mismatches {mismatch}")


def test_criterion_07_ldpc():
    rng = np.random.default_rng(7)
    code = bl.regular_code(72, seed=0)
    info = rng.integers(0, 2, (100, code.k)).astype(np.uint8)
    cw = code.encode(info)
    parity_ok = not code.syndrome(cw).any()
    out, _, _ = code.decode(bl.LLR_CLIP * (1 - 2 * cw.astype(float)))
    noiseless_ber = float(np.mean(out != info))
    ch = ChannelConfig(N_T=2, N_R=2)
    bers = []
    for snr in (0, 5, 10, 15):
        errors = 0
        for _ in range(10):
            inf = rng.integers(0, 2, (1000, code.k)).astype(np.uint8)
            taps = sample_channel(ch, rng, batch=1000)[:, 0]
            llr = bl.bpsk_chain(code.encode(inf), taps, 1.0, 10 ** (snr / 10), rng)
            dec, _, _ = code.decode(llr)
            errors += int(np.sum(dec != inf))
        bers.append(errors / (10000 * code.k))
    rises = [b - a for a, b in zip(bers, bers[1:]) if b > a]
    monotone = len(rises) == 0 or (len(rises) == 1 and rises[0] <= 1e-4)
    ok = parity_ok and noiseless_ber == 0.0 and monotone
    report(7, ok, f"parity ok={parity_ok}, noiseless BER {noiseless_ber}, BER by SNR {[f'{b:.2e}' for b in bers]}")


def test_criterion_08_aloha():
    _, ok = bl.aloha_round(2, 0.5, np.random.default_rng(8), rounds=100_000)
    rate = float(ok.any(axis=1).mean())
    report(8, abs(rate - 0.5) <= 0.01 * 0.5, f"delivery rate {rate:.4f} (target 0.5 within 1%)")


@pytest.mark.slow
def test_criterion_09_adaptation_gain():
    t0 = time.perf_counter()
    runs = trend_runs()
    wall = time.perf_counter() - t0
    h, j, pc = (mean_final(runs[r]) for r in ("hyper", "joint", "per_channel"))
    ok = h >= j + 0.02 and pc >= h - 0.02 and wall <= 15 * 60
    per_seed = {r: [round(t.final_accuracy, 3) for t in runs[r]] for r in runs}
    report(9, ok, f"hyper {h:.3f}, joint {j:.3f}, per-channel {pc:.3f}, {wall / 60:.1f} min; per seed {json.dumps(per_seed)}")


@pytest.mark.slow
def test_criterion_10_bandwidth_expansion():
    lth1 = mean_final(trend_runs(1, "LTH", 5, False)["hyper"])
    lth8 = mean_final(trend_runs(8, "LTH", 5, False)["hyper"])
    th8 = mean_final(trend_runs(8, "TH", 5, False)["hyper"])
    ok = lth8 >= lth1 and lth8 >= th8 - 0.01
    report(10, ok, f"LTH L_b=1 {lth1:.3f}, LTH L_b=8 {lth8:.3f}, TH L_b=8 {th8:.3f}")


@pytest.mark.slow
def test_criterion_11_anytime_accuracy():
    acc = np.mean([t.accuracy for t in trend_runs()["hyper"]], axis=0)
    dip = float(np.max(np.maximum.accumulate(acc) - acc))
    cfg = trend_config(baseline={"L_enc": 10, "ann_hidden": 64, "steps": 300}, evaluation={"n_realizations": 2})
    base = ex.run_baseline(cfg, 0)
    plan = bl.SubframePlan(40, 10)
    piecewise = all(
        np.all(base.accuracy[f * plan.L_enc:plan.boundary(f) - 1] == base.accuracy[f * plan.L_enc])
        for f in range(plan.F)
    )
    ok = dip <= 0.02 and piecewise
    report(11, ok, f"largest local dip {dip:.3f}; baseline piecewise constant={piecewise}")


def test_criterion_12_reproducibility(tmp_path):
    cfg = {
        "data": {"D": 16, "L": 12, "onset": 3, "n_per_class": 8, "n_test_per_class": 4},
        "channel": {"N_T": 2, "N_R": 2},
        "network": {"enc_hidden": 8, "dec_hidden": 8, "hyper_hidden": 8, "L_p": 4},
        "training": {"steps": 10, "batch_size": 4},
        "evaluation": {"n_realizations": 3},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    files = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["train", "--config", str(path), "--out", str(out), "--seed", "5"]) == 0
        assert cli.main(["eval", "--config", str(path), "--out", str(out), "--seed", "5",
                         "--checkpoint", str(out / "checkpoint.bin")]) == 0
        files.append([(out / n).read_bytes() for n in ("checkpoint.bin", "trace_hyper_LTH.csv", "trace_hyper_LTH.json")])
    same = files[0] == files[1]
    report(12, same, f"checkpoint and traces byte-identical={same}")
