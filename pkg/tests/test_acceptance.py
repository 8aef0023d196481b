"""Acceptance gate: one test per release criterion, each printing a
PASS/FAIL line with its measured value and runtime.

Criteria 5-10 share one full experiment run (the TP-at-45ps screening
configuration shipped in configs/acceptance_tp45.json); the rest exercise
their subsystems directly. Run with `pytest tests/test_acceptance.py -v -s`
to watch the per-criterion lines.
"""

import copy
import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from delaywatch.cfst import CfstConfig, quantize_delays
from delaywatch.features import FEATURE_NAMES, extract_features
from delaywatch.library import STRENGTHS
from delaywatch.netlist import DesignGenConfig, DesignIndex, generate_design
from delaywatch.pipeline import RunContext, _contamination_ids, read_json, run_experiment
from delaywatch.silicon import LotSimulator, ProcessSkew, make_lot
from delaywatch.sta import gtm_from_csv
from delaywatch.watchdog import (
    Dataset,
    MlpParams,
    TrainConfig,
    init_params,
    loss_and_gradients,
    train,
)
from delaywatch.features import dataset_from_csv

CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "acceptance_tp45.json"

REAL_BINS = ("Fast", "Typical", "Slow")


def report(criterion: str, ok: bool, detail: str, elapsed: float | None = None):
    t = f" [{elapsed:.1f}s]" if elapsed is not None else ""
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}{t}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="session")
def acceptance_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    cfg = json.loads(CONFIG_PATH.read_text())
    t0 = time.perf_counter()
    run_experiment(cfg, out)
    elapsed = time.perf_counter() - t0
    return out, elapsed


# --- 1: feature schema against a brute-force recount -----------------------


def brute_force_counts(design, index, path):
    per_portion = []
    for sub in (path.lp, path.cp, path.dp):
        counts = {s.value: 0 for s in STRENGTHS}
        delay = 0.0
        for gid in sub.gates:
            g = index.gate_by_id[gid]
            counts[g.drive_strength.value] += 1
            delay += index.stage_nominal[index.gate_idx[gid]]
        lengths = {f"M{i}": 0.0 for i in range(1, 8)}
        for wk in sub.wires:
            for s in index.wire_by_key[wk].segments:
                lengths[s.layer] += s.length_um
        per_portion.append((len(sub.gates), delay, counts, lengths))
    return per_portion


def test_criterion_01_feature_schema():
    t0 = time.perf_counter()
    design = generate_design(DesignGenConfig(registers=60, combinational_gates=700,
                                             max_logic_depth=8,
                                             path_cap_per_endpoint=60), seed=101)
    index = DesignIndex(design)
    rng = np.random.default_rng(11)
    rows = rng.choice(len(design.paths), size=1000, replace=len(design.paths) < 1000)
    mismatches = 0
    for pi in rows:
        p = design.paths[int(pi)]
        vec = extract_features(design, p, index.path_nominal_delay(p), index)
        assert vec.shape == (48,)
        named = dict(zip(FEATURE_NAMES, vec))
        for prefix, (count, delay, counts, lengths) in zip(
                ("lp", "cp", "dp"), brute_force_counts(design, index, p)):
            if named[f"{prefix}_gate_count"] != count:
                mismatches += 1
            if named[f"{prefix}_delay_ps"] != delay:
                mismatches += 1
            for s in STRENGTHS:
                if named[f"{prefix}_n_{s.value}"] != counts[s.value]:
                    mismatches += 1
            for i in range(1, 7):
                if named[f"{prefix}_len_m{i}_um"] != lengths[f"M{i}"]:
                    mismatches += 1
    elapsed = time.perf_counter() - t0
    report("1 (feature schema)", mismatches == 0 and elapsed < 10.0,
           f"1000 paths, {mismatches} mismatches vs brute-force recount", elapsed)


# --- 2: analytic gradients vs central finite differences -------------------


def _flatten(params):
    return np.concatenate([w.ravel() for w in params.weights]
                          + [b.ravel() for b in params.biases]
                          + [np.asarray(params.slopes)])


def _rebuild(vec, shapes, n_slopes, act):
    ws, bs, pos = [], [], 0
    for s in shapes:
        ws.append(vec[pos:pos + s[0] * s[1]].reshape(s))
        pos += s[0] * s[1]
    for s in shapes:
        bs.append(vec[pos:pos + s[1]])
        pos += s[1]
    return MlpParams(ws, bs, list(vec[pos:pos + n_slopes]), act)


def _kink_free(params, X, tol=1e-3):
    a = X
    for li in range(len(params.weights) - 1):
        z = a @ params.weights[li] + params.biases[li]
        if np.min(np.abs(z)) < tol:
            return False
        a = np.where(z > 0, z, params.slopes[li] * z) if params.activation == "prelu" \
            else np.maximum(z, 0.0)
    return True


def test_criterion_02_gradient_oracle():
    t0 = time.perf_counter()
    eps = 1e-4
    worst = 0.0
    rng = np.random.default_rng(12345)
    for draw in range(20):
        hidden = tuple(int(rng.integers(25, 33))
                       for _ in range(int(rng.integers(1, 4))))
        sizes = (48,) + hidden + (1,)
        shapes = [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]
        for act in ("tanh", "sigmoid", "relu", "prelu"):
            data_seed = 1000 * draw
            while True:
                drng = np.random.default_rng((draw, data_seed))
                X = drng.normal(size=(8, 48))
                y = drng.normal(size=8)
                params = init_params(sizes, act, np.random.default_rng((draw, 7)))
                if act in ("tanh", "sigmoid") or _kink_free(params, X):
                    break
                data_seed += 1  # a pre-activation sat on a kink: redraw data
            _, gw, gb, gs = loss_and_gradients(params, X, y)
            analytic = np.concatenate([g.ravel() for g in gw]
                                      + [g.ravel() for g in gb] + [np.asarray(gs)])
            v0 = _flatten(params)
            fd = np.empty_like(v0)
            for i in range(len(v0)):
                vp, vm = v0.copy(), v0.copy()
                vp[i] += eps
                vm[i] -= eps
                fd[i] = (loss_and_gradients(_rebuild(vp, shapes, len(gs), act), X, y)[0]
                         - loss_and_gradients(_rebuild(vm, shapes, len(gs), act), X, y)[0]) / (2 * eps)
            rel = np.abs(analytic - fd) / np.maximum(1.0, np.maximum(np.abs(analytic),
                                                                     np.abs(fd)))
            worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    report("2 (gradient oracle)", worst < 1e-4 and elapsed < 30.0,
           f"max relative error {worst:.3e} over 20 draws x 4 activations", elapsed)


# --- 3: quantization bound ---------------------------------------------------


def test_criterion_03_cfst_quantization():
    t0 = time.perf_counter()
    cfg = CfstConfig(step_ps=15.0, period_ps=714.28)
    rng = np.random.default_rng(33)
    true = rng.uniform(1.0, cfg.period_ps, size=100_000)
    measured, slack, fail = quantize_delays(true, cfg)
    err = measured - true
    violations = int(np.sum(~((err >= 0.0) & (err < cfg.step_ps))))
    steps = slack / cfg.step_ps
    violations += int(np.sum(np.abs(steps - np.round(steps)) > 1e-9))
    violations += int(fail.sum())
    elapsed = time.perf_counter() - t0
    report("3 (quantization)", violations == 0 and elapsed < 5.0,
           f"{violations} violations over 100000 delays", elapsed)


# --- 4: cross-die averaging law ---------------------------------------------


def test_criterion_04_averaging_law():
    t0 = time.perf_counter()
    design = generate_design(DesignGenConfig(registers=8, combinational_gates=60,
                                             max_logic_depth=4), seed=404)
    index = DesignIndex(design)
    cfg = CfstConfig(step_ps=15.0, period_ps=design.clock_period_ps)
    row = int(np.argmax(index.path_nominal))
    m, lots = 100, 240
    per_lot = []
    for k in range(lots):
        lot = make_lot(design, ProcessSkew(0, 0), m, [], seed=5000 + k,
                       persistent_offsets=(0.0,))
        true = LotSimulator(lot, index).lot_true_delays()[row, :] + index.endpoint_setup[row]
        _, slack, fail = quantize_delays(true, cfg)
        assert not fail.any()
        per_lot.append(slack)
    slacks = np.stack(per_lot)
    sigma_sample = slacks.std(ddof=1)
    sd_of_mean = slacks.mean(axis=1).std(ddof=1)
    ratio = sd_of_mean / (sigma_sample / np.sqrt(m))
    elapsed = time.perf_counter() - t0
    report("4 (averaging law)", 0.8 <= ratio <= 1.2 and elapsed < 60.0,
           f"sd(mean)/[sigma/sqrt({m})] = {ratio:.3f} over {lots} lots", elapsed)


# --- 5-10: shared full experiment --------------------------------------------


def test_criterion_05_watchdog_efficacy(acceptance_run):
    out, elapsed = acceptance_run
    stats = read_json(out / "watchdog_stats.json")
    worst = max(stats[b]["sigma_nn_ps"] / stats[b]["raw_sigma_test_ps"]
                for b in REAL_BINS)
    detail = ", ".join(
        f"{b}: sigma {stats[b]['sigma_nn_ps']:.2f} vs raw {stats[b]['raw_sigma_test_ps']:.2f}"
        for b in REAL_BINS)
    report("5 (watchdog efficacy)", worst <= 0.5 and elapsed < 300.0, detail, elapsed)


def test_criterion_06_tp_detection(acceptance_run):
    out, elapsed = acceptance_run
    stats = read_json(out / "watchdog_stats.json")
    m = read_json(out / "metrics.json")
    agg = m["modes"]["ngtm"]["aggregate"]
    counts = m["counts"]
    sigma_ok = all(stats[b]["sigma_nn_ps"] <= 10.0 for b in REAL_BINS)
    ok = (sigma_ok and counts["trojan_paths"] >= 120 and counts["clean_paths"] >= 2000
          and agg["tpo"] >= 85.0 and agg["fpo"] <= 1.0 and elapsed < 300.0)
    report("6 (TP detection)", ok,
           f"TPo {agg['tpo']:.1f}% FPo {agg['fpo']:.2f}% over "
           f"{counts['trojan_paths']} trojan / {counts['clean_paths']} clean paths",
           elapsed)


def test_criterion_07_mode_ordering(acceptance_run):
    out, _ = acceptance_run
    m = read_json(out / "metrics.json")["modes"]
    tpo = {k: m[k]["aggregate"]["tpo"] for k in ("ngtm", "sgtm", "ssta")}
    fpo = {k: m[k]["aggregate"]["fpo"] for k in ("ngtm", "sgtm")}
    ok = (tpo["ngtm"] > tpo["sgtm"] >= tpo["ssta"] and fpo["ngtm"] <= fpo["sgtm"])
    report("7 (mode ordering)", ok,
           f"TPo ngtm {tpo['ngtm']:.1f} > sgtm {tpo['sgtm']:.1f} >= ssta {tpo['ssta']:.1f}; "
           f"FPo ngtm {fpo['ngtm']:.2f} <= sgtm {fpo['sgtm']:.2f}")


def test_criterion_08_youden_vs_4sigma(acceptance_run):
    out, _ = acceptance_run
    youden = read_json(out / "youden.json")["modes"]["ngtm"]
    details = []
    ok = True
    for b in REAL_BINS:
        t4 = youden[b]["threshold_used_ps"]
        t_star = youden[b]["youden_threshold_ps"]
        ok = ok and youden[b]["status"] == "ok" and abs(t_star - t4) <= 0.5 * t4
        details.append(f"{b}: |{t_star:.2f} - {t4:.2f}| <= {0.5 * t4:.2f}")
    report("8 (youden vs 4sigma)", ok, "; ".join(details))


def test_criterion_09_contamination_robustness(acceptance_run):
    out, _ = acceptance_run
    t0 = time.perf_counter()
    cfg = read_json(out / "resolved_config.json")
    ctx = RunContext(out, cfg)
    label = "Typical"
    per = ctx.mean_slack_table()[label]
    troj = _contamination_ids(ctx, per, 40)
    assert len(troj) == 40
    gtm = gtm_from_csv((out / "gtm_pathspec.csv").read_text())
    Xc = ctx.features_for(troj)
    yc = np.array([per[p]["mu"] - gtm[p].slack for p in troj])

    ids, X, y = dataset_from_csv((out / f"dataset_{label}.csv").read_text())
    ds = Dataset(tuple(ids), X, y)
    tc = TrainConfig(learning_rate=cfg["train"]["learning_rate"],
                     epochs=cfg["train"]["epochs"], batch_size=cfg["train"]["batch_size"],
                     splits=tuple(cfg["train"]["splits"]), patience=cfg["train"]["patience"],
                     seed=cfg["seed"], hidden=tuple(cfg["train"]["hidden"]),
                     activation=cfg["train"]["activation"])
    diag: dict = {}
    _, contaminated = train(ds, tc, extra_train_rows=(Xc, yc), diagnostics=diag)
    clean_sigma = read_json(out / "watchdog_stats.json")[label]["sigma_nn_ps"]
    n_train = diag["n_split"][0]
    rel = abs(contaminated.sigma_nn_ps - clean_sigma) / clean_sigma
    elapsed = time.perf_counter() - t0
    report("9 (contamination)", rel < 0.10 and n_train >= 5000,
           f"sigma {clean_sigma:.3f} -> {contaminated.sigma_nn_ps:.3f} "
           f"({100 * rel:.1f}% change) with 40 rows in a {n_train}-row training split",
           elapsed)


def test_criterion_10_binning_benefit(acceptance_run):
    out, _ = acceptance_run
    m = read_json(out / "metrics.json")["modes"]["ngtm"]
    offsets = read_json(out / "resolved_config.json")["lot"]["persistent_offsets"]
    binned, unbinned = m["aggregate"]["tpo"], m["unbinned"]["tpo"]
    report("10 (binning benefit)",
           len(set(offsets)) == 3 and binned >= unbinned,
           f"TPo binned {binned:.1f}% >= unbinned {unbinned:.1f}% "
           f"(lot derivatives {offsets})")


# --- 11: full-pipeline determinism -------------------------------------------

MINI_DET = {
    "seed": 11,
    "design": {"registers": 24, "combinational_gates": 220, "max_logic_depth": 5,
               "path_cap_per_endpoint": 24},
    "lot": {"n_dies": 9},
    "binning": {"bins": 3, "probe_paths": 6},
    "trojans": {"tp_counts": {"Medium": 2}, "tt_counts": {},
                "tp_deltas": {"Medium": 45.0}, "tt_deltas": {},
                "min_tested_paths": 1, "max_paths_per_net": 14},
    "train": {"m_per_endpoint": 12, "epochs": 20, "batch_size": 32, "patience": 8,
              "hidden": [25]},
    "cfst": {"tester_min_delay_ps": 120.0},
}


def _tree_hash(root: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.iterdir()) if p.is_file()}


def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    a = run_experiment(copy.deepcopy(MINI_DET), tmp_path / "a")
    b = run_experiment(copy.deepcopy(MINI_DET), tmp_path / "b")
    ha, hb = _tree_hash(a), _tree_hash(b)
    same = ha == hb
    elapsed = time.perf_counter() - t0
    report("11 (determinism)", same,
           f"{len(ha)} artifacts, trees {'identical' if same else 'DIFFER'}", elapsed)
