"""Config-driven end-to-end experiment pipeline.

Stages (in order): gen, sta, fab, cfst, bin, trainset, train, detect, roc,
report. Every stage reads its inputs from the artifact directory and writes
its outputs there, so the staged subcommands and a monolithic run produce
identical bytes. Reruns with the same resolved config are hash-identical;
stage-level resume skips stages whose recorded config hash and output
checksums still match.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import zlib
from pathlib import Path

import numpy as np
import pandas as pd

from .cfst import CfstConfig, bin_labels, quantize_delays, speed_bin
from .detector import (
    DetectionMode,
    PathObservation,
    detect,
    roc_and_youden,
    threshold_4sigma,
)
from .errors import SchemaError, SingleClass, StageFailure
from .features import feature_matrix
from .netlist import (
    Design,
    DesignGenConfig,
    DesignIndex,
    WirelengthDistribution,
    design_from_json,
    design_to_json,
    generate_design,
)
from .silicon import (
    FabLot,
    LotSimulator,
    ProcessSkew,
    RandomPvModel,
    TrojanKind,
    TrojanSize,
    VoltageNoiseModel,
    lot_from_json,
    lot_to_json,
    make_lot,
    make_trojan,
    trojan_affected_path_ids,
)
from .sta import GlobalPessimistic, PathSpecific, gtm_from_csv, gtm_table, gtm_to_csv, static_shift
from .watchdog import (
    ArchSearchSpace,
    Dataset,
    TrainConfig,
    arch_search,
    model_from_json,
    model_to_json,
    select_training_paths,
    train,
)
from .features import dataset_from_csv, dataset_to_csv

_ATPG_TAG = 0xA791
_PLAN_TAG = 0x9147

STAGE_ORDER = ["gen", "sta", "fab", "cfst", "bin", "trainset", "train",
               "detect", "roc", "report"]

SIZE_NAMES = [s.value for s in TrojanSize]


# ---------------------------------------------------------------------------
# configuration


DEFAULT_CONFIG = {
    "schema_version": "1",
    "design": {
        "registers": 200,
        "combinational_gates": 4000,
        "max_logic_depth": 12,
        "wire_scale": 1.0,
        "wire_sigma": 0.7,
        "path_cap_per_endpoint": 48,
        "slack_headroom_frac": 0.12,
    },
    "skew": {"x_pct": 5.0, "y_pct": 5.0},
    "lot": {"n_dies": 300, "persistent_offsets": [-0.01, 0.0, 0.01]},
    "pv": {"sigma_d": 0.03},
    "voltage": {
        "v_nom": 0.9,
        "mu_drop_frac": 0.03,
        "sigma_drop_frac": 0.015,
        "max_drop_frac": 0.12,
        "alpha": 1.3,
    },
    "margins": {
        "rail_frac": 0.94,
        "endpoint_uncertainty_ps": 25.0,
        "pathspecific_sigma_mult": 3.0,
    },
    "cfst": {
        "step_ps": 15.0,
        "trials_per_die": 1,
        "tester_min_delay_ps": 150.0,
        "atpg_fail_prob": 0.05,
    },
    "binning": {"bins": 3, "probe_paths": 24, "include_unbinned": False},
    "trojans": {
        "tp_counts": {"Small": 12, "Medium": 12, "Large": 12},
        "tt_counts": {"Small": 12, "Medium": 12, "Large": 12},
        "tp_deltas": {"Small": 20.0, "Medium": 45.0, "Large": 90.0},
        "tt_deltas": {"Small": 5.0, "Medium": 10.0, "Large": 20.0},
        "min_victim_slack_ps": 110.0,
        "max_paths_per_net": 10,
        "min_tested_paths": 3,
    },
    "detect": {
        "modes": ["ssta", "sgtm", "ngtm"],
        "fixed_threshold_ps": 45.0,
        "paths_per_wire": 3,
        "max_paths": None,
    },
    "train": {
        "m_per_endpoint": 25,
        "hidden": [32, 28],
        "activation": "relu",
        "learning_rate": 0.02,
        "epochs": 200,
        "batch_size": 64,
        "patience": 20,
        "splits": [0.6, 0.2, 0.2],
        "contamination_rows": 0,
        "arch_search": False,
        "search": {
            "layers": [1, 2, 3],
            "widths": list(range(25, 33)),
            "activations": ["tanh", "sigmoid", "relu", "prelu"],
        },
    },
    "artifacts": {"write_raw_delays": True, "write_measurements": True},
}


def _require(doc: dict, field: str, typ, pred=None, msg=""):
    parts = field.split(".")
    node = doc
    for p in parts:
        if not isinstance(node, dict) or p not in node:
            raise SchemaError(field, "missing")
        node = node[p]
    if typ is float and isinstance(node, int) and not isinstance(node, bool):
        node = float(node)
    if not isinstance(node, typ) or isinstance(node, bool) and typ is not bool:
        raise SchemaError(field, f"expected {getattr(typ, '__name__', typ)}")
    if pred is not None and not pred(node):
        raise SchemaError(field, msg or "invalid value")
    return node


# tables a config provides wholesale rather than field-by-field
_REPLACE_WHOLE = {"tp_counts", "tt_counts", "tp_deltas", "tt_deltas",
                  "persistent_offsets"}


def _merge_defaults(doc: dict, defaults: dict) -> dict:
    out = {}
    for k, v in defaults.items():
        if isinstance(v, dict) and k not in _REPLACE_WHOLE:
            sub = doc.get(k, {})
            out[k] = _merge_defaults(sub if isinstance(sub, dict) else {}, v)
        else:
            out[k] = doc.get(k, v)
    for k in doc:
        if k not in out:
            raise SchemaError(k, "unknown field")
    return out


def validate_config(doc: dict) -> dict:
    """Merge defaults and validate. Raises SchemaError naming the field."""
    if not isinstance(doc, dict):
        raise SchemaError("", "config must be a JSON object")
    if "seed" not in doc:
        raise SchemaError("seed", "missing")
    cfg = _merge_defaults({k: v for k, v in doc.items() if k != "seed"}, DEFAULT_CONFIG)
    cfg["seed"] = doc["seed"]

    _require(cfg, "seed", int, lambda v: v >= 0, "must be a nonnegative integer")
    _require(cfg, "design.registers", int, lambda v: v >= 2, "must be >= 2")
    _require(cfg, "design.combinational_gates", int, lambda v: v >= 1, "must be >= 1")
    _require(cfg, "design.max_logic_depth", int, lambda v: v >= 1, "must be >= 1")
    _require(cfg, "design.path_cap_per_endpoint", int, lambda v: v >= 1, "must be >= 1")
    _require(cfg, "design.wire_scale", float, lambda v: v > 0, "must be > 0")
    _require(cfg, "lot.n_dies", int, lambda v: v >= 1, "must be >= 1")
    _require(cfg, "lot.persistent_offsets", list, lambda v: len(v) >= 1, "must be nonempty")
    _require(cfg, "pv.sigma_d", float, lambda v: v >= 0, "must be >= 0")
    _require(cfg, "voltage.alpha", float, lambda v: v > 0, "must be > 0")
    _require(cfg, "margins.rail_frac", float, lambda v: 0 < v < 1, "must be in (0, 1)")
    _require(cfg, "cfst.step_ps", float, lambda v: v > 0, "must be > 0")
    _require(cfg, "cfst.trials_per_die", int, lambda v: v >= 1, "must be >= 1")
    _require(cfg, "cfst.atpg_fail_prob", float, lambda v: 0 <= v <= 1, "must be in [0, 1]")
    _require(cfg, "binning.bins", int, lambda v: v >= 1, "must be >= 1")
    _require(cfg, "binning.probe_paths", int, lambda v: v >= 1, "must be >= 1")
    _require(cfg, "detect.paths_per_wire", int, lambda v: v >= 1, "must be >= 1")
    _require(cfg, "detect.modes", list,
             lambda v: v and all(m in ("ssta", "sgtm", "ngtm") for m in v),
             "must be a nonempty subset of ssta/sgtm/ngtm")
    _require(cfg, "train.m_per_endpoint", int, lambda v: v >= 1, "must be >= 1")
    _require(cfg, "train.epochs", int, lambda v: v >= 1, "must be >= 1")
    _require(cfg, "train.contamination_rows", int, lambda v: v >= 0, "must be >= 0")
    splits = _require(cfg, "train.splits", list, lambda v: len(v) == 3, "need 3 fractions")
    if abs(sum(splits) - 1.0) > 1e-9:
        raise SchemaError("train.splits", "fractions must sum to 1")
    for kind_field in ("trojans.tp_counts", "trojans.tt_counts",
                       "trojans.tp_deltas", "trojans.tt_deltas"):
        table = _require(cfg, kind_field, dict)
        for k in table:
            if k not in SIZE_NAMES:
                raise SchemaError(f"{kind_field}.{k}", "unknown size class")
    for counts_key, deltas_key in (("tp_counts", "tp_deltas"), ("tt_counts", "tt_deltas")):
        for size, n in cfg["trojans"][counts_key].items():
            if n > 0 and size not in cfg["trojans"][deltas_key]:
                raise SchemaError(f"trojans.{deltas_key}.{size}",
                                  "missing delta for a counted size class")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# artifact helpers


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def read_json(path: Path):
    return json.loads(path.read_text())


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_gz_csv(path: Path, df: pd.DataFrame) -> None:
    raw = io.BytesIO()
    # mtime pinned to zero keeps the archive byte-stable across reruns
    with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
        gz.write(df.to_csv(index=False).encode())
    path.write_bytes(raw.getvalue())


class RunContext:
    """Artifact directory plus lazily loaded shared objects."""

    def __init__(self, out_dir: Path, cfg: dict):
        self.out = Path(out_dir)
        self.cfg = cfg
        self._cache: dict = {}

    def path(self, name: str) -> Path:
        return self.out / name

    # --- lazily loaded artifacts ---

    def design(self) -> Design:
        if "design" not in self._cache:
            self._cache["design"] = design_from_json(read_json(self.path("design.json")))
        return self._cache["design"]

    def index(self) -> DesignIndex:
        if "index" not in self._cache:
            self._cache["index"] = DesignIndex(self.design())
        return self._cache["index"]

    def lot(self) -> FabLot:
        if "lot" not in self._cache:
            self._cache["lot"] = lot_from_json(self.design(), read_json(self.path("lot.json")))
        return self._cache["lot"]

    def voltage_model(self) -> VoltageNoiseModel:
        v = self.cfg["voltage"]
        return VoltageNoiseModel(**v)

    def cfst_config(self) -> CfstConfig:
        return CfstConfig(step_ps=float(self.cfg["cfst"]["step_ps"]),
                          period_ps=self.design().clock_period_ps,
                          trials_per_die=int(self.cfg["cfst"]["trials_per_die"]))

    def margin_modes(self):
        m = self.cfg["margins"]
        vm = self.voltage_model()
        return {
            "global": GlobalPessimistic(rail_voltage=vm.v_nom * m["rail_frac"],
                                        endpoint_uncertainty_ps=m["endpoint_uncertainty_ps"],
                                        v_nom=vm.v_nom, alpha=vm.alpha),
            "pathspec": PathSpecific(vm, sigma_mult=m["pathspecific_sigma_mult"]),
        }

    def gtm(self, which: str):
        key = f"gtm_{which}"
        if key not in self._cache:
            self._cache[key] = gtm_from_csv(self.path(f"gtm_{which}.csv").read_text())
        return self._cache[key]

    def measured(self):
        """(path ids, slack matrix, fail matrix) per die, trial-averaged."""
        if "measured" not in self._cache:
            ids = read_json(self.path("measure_paths.json"))["path_ids"]
            slack = np.load(self.path("measured_slack.npy"))
            fail = np.load(self.path("measured_fail.npy"))
            self._cache["measured"] = (ids, slack, fail)
        return self._cache["measured"]

    def bins(self) -> dict:
        return read_json(self.path("bins.json"))

    def mean_slack_table(self):
        if "mean_slack" not in self._cache:
            table: dict[str, dict[str, dict]] = {}
            with self.path("mean_slack.csv").open() as f:
                for row in csv.DictReader(f):
                    table.setdefault(row["bin"], {})[row["path_id"]] = {
                        "mu": float(row["mu_slack_ps"]),
                        "n_ok": int(row["n_ok"]),
                        "n_fail": int(row["n_fail"]),
                        "sd": float(row["sd_slack_ps"]),
                    }
            self._cache["mean_slack"] = table
        return self._cache["mean_slack"]

    def detect_path_ids(self) -> list[str]:
        return read_json(self.path("candidates.json"))["detect_path_ids"]

    def affected_ids(self) -> set[str]:
        return set(read_json(self.path("trojans.json"))["affected_path_ids"])

    def features_for(self, path_ids) -> np.ndarray:
        if "feat_all" not in self._cache:
            idx = self.index()
            self._cache["feat_all"] = feature_matrix(self.design(), self.design().paths, idx)
        idx = self.index()
        rows = [idx.path_idx[pid] for pid in path_ids]
        return self._cache["feat_all"][rows]

    def training_selection(self):
        idx = self.index()
        paths = select_training_paths(self.design(), int(self.cfg["train"]["m_per_endpoint"]),
                                      idx, exclude=self.affected_ids())
        return paths

    def bin_label_list(self, include_unbinned=None) -> list[str]:
        labels = bin_labels(int(self.cfg["binning"]["bins"]))
        if include_unbinned is None:
            include_unbinned = bool(self.cfg["binning"]["include_unbinned"])
        if include_unbinned and "All" not in labels:
            labels = labels + ["All"]
        return labels


# ---------------------------------------------------------------------------
# stages


def stage_gen(ctx: RunContext) -> list[str]:
    d = ctx.cfg["design"]
    cfg = DesignGenConfig(
        registers=d["registers"],
        combinational_gates=d["combinational_gates"],
        max_logic_depth=d["max_logic_depth"],
        wirelength=WirelengthDistribution(scale=d["wire_scale"], sigma=d["wire_sigma"]),
        path_cap_per_endpoint=d["path_cap_per_endpoint"],
        slack_headroom_frac=d["slack_headroom_frac"],
    )
    design = generate_design(cfg, seed=int(ctx.cfg["seed"]))
    write_json(ctx.path("design.json"), design_to_json(design))
    return ["design.json"]


def stage_sta(ctx: RunContext) -> list[str]:
    design, idx = ctx.design(), ctx.index()
    modes = ctx.margin_modes()
    ctx.path("gtm_global.csv").write_text(gtm_to_csv(gtm_table(design, modes["global"], idx)))
    ctx.path("gtm_pathspec.csv").write_text(gtm_to_csv(gtm_table(design, modes["pathspec"], idx)))
    return ["gtm_global.csv", "gtm_pathspec.csv"]


def _plan_trojans(ctx: RunContext, idx: DesignIndex, detect_set: set[str],
                  tested_by_net: dict[str, list[str]]):
    """Pick victim nets per kind/size honoring slack and coverage rules."""
    tcfg = ctx.cfg["trojans"]
    T = ctx.design().clock_period_ps
    nominal_eff = idx.path_nominal + idx.endpoint_setup
    step = float(ctx.cfg["cfst"]["step_ps"])
    rng = np.random.default_rng(np.random.SeedSequence((_PLAN_TAG, int(ctx.cfg["seed"]))))

    taken_paths: set[str] = set()
    specs = []

    def eligible(net: str, delta: float) -> bool:
        all_pis = idx.paths_by_net.get(net, [])
        if not (1 <= len(all_pis) <= int(tcfg["max_paths_per_net"])):
            return False
        tested = tested_by_net.get(net, [])
        if len(tested) < int(tcfg["min_tested_paths"]):
            return False
        affected = {idx.design.paths[pi].id for pi in all_pis}
        if affected & taken_paths:
            return False
        slack_floor = max(float(tcfg["min_victim_slack_ps"]), delta + 2 * step + 25.0)
        return bool(np.min(T - nominal_eff[all_pis]) >= slack_floor)

    for kind, counts_key, deltas_key in ((TrojanKind.TP, "tp_counts", "tp_deltas"),
                                         (TrojanKind.TT, "tt_counts", "tt_deltas")):
        for size_name in SIZE_NAMES:
            want = int(ctx.cfg["trojans"][counts_key].get(size_name, 0))
            if want == 0:
                continue
            delta = float(ctx.cfg["trojans"][deltas_key][size_name])
            pool = [n for n in sorted(tested_by_net) if eligible(n, delta)]
            if len(pool) < want:
                raise StageFailure("fab", ValueError(
                    f"only {len(pool)} eligible victim nets for "
                    f"{kind.value}/{size_name}, need {want}"))
            chosen = [pool[i] for i in
                      sorted(rng.choice(len(pool), size=want, replace=False).tolist())]
            for net in chosen:
                specs.append(make_trojan(kind, net, TrojanSize(size_name), delta))
                for pi in idx.paths_by_net[net]:
                    taken_paths.add(idx.design.paths[pi].id)
    return specs


def stage_fab(ctx: RunContext) -> list[str]:
    """Test planning (candidate paths per wire, triage) plus lot fabrication
    with the planned Trojans."""
    design, idx = ctx.design(), ctx.index()
    seed = int(ctx.cfg["seed"])
    dcfg, ccfg = ctx.cfg["detect"], ctx.cfg["cfst"]
    n_per_wire = int(dcfg["paths_per_wire"])
    max_paths = dcfg["max_paths"]
    tester_min = float(ccfg["tester_min_delay_ps"])
    atpg_p = float(ccfg["atpg_fail_prob"])
    nominal_eff = idx.path_nominal + idx.endpoint_setup

    wire_status: dict[str, dict] = {}
    detect_set: set[str] = set()
    power_rows = []
    tested_by_net: dict[str, list[str]] = {}

    for wkey in sorted(w.key for w in design.wires):
        hits = idx.paths_by_dp_wire.get(wkey, [])
        if not hits:
            wire_status[wkey] = {"status": "no_path", "paths": []}
            continue
        ranked = sorted(hits, key=lambda pi: (-idx.subpath_nominal_delay(design.paths[pi].dp),
                                              design.paths[pi].id))[:n_per_wire]
        rng = np.random.default_rng(
            np.random.SeedSequence((_ATPG_TAG, seed, zlib.crc32(wkey.encode()))))
        testable, power, discarded = [], [], []
        for pi in ranked:
            p = design.paths[pi]
            if nominal_eff[pi] < tester_min:
                power.append(p.id)
            elif rng.random() < atpg_p:
                discarded.append(p.id)
            else:
                testable.append(p.id)
        if testable:
            budget_left = max_paths is None or len(detect_set) < int(max_paths)
            new = [pid for pid in testable if pid not in detect_set]
            if budget_left or not new:
                detect_set.update(testable)
                wire_status[wkey] = {"status": "testable", "paths": testable}
                net = idx.wire_by_key[wkey].driver_cell
                tested_by_net.setdefault(net, [])
                tested_by_net[net] = sorted(set(tested_by_net[net]) | set(testable))
            else:
                wire_status[wkey] = {"status": "skipped_budget", "paths": []}
        elif power and not discarded:
            wire_status[wkey] = {"status": "power_candidate", "paths": power}
            for pid in power:
                power_rows.append((wkey, pid, float(nominal_eff[idx.path_idx[pid]])))
        else:
            wire_status[wkey] = {"status": "discarded", "paths": []}

    specs = _plan_trojans(ctx, idx, detect_set, tested_by_net)
    lcfg = ctx.cfg["lot"]
    lot = make_lot(design, ProcessSkew(**ctx.cfg["skew"]), int(lcfg["n_dies"]), specs,
                   seed=seed,
                   persistent_offsets=tuple(lcfg["persistent_offsets"]),
                   pv=RandomPvModel(float(ctx.cfg["pv"]["sigma_d"])),
                   voltage=ctx.voltage_model())
    affected = trojan_affected_path_ids(lot.design, idx)

    write_json(ctx.path("candidates.json"), {
        "schema_version": "1",
        "wires": wire_status,
        "detect_path_ids": sorted(detect_set),
        "counts": {
            "wires": len(wire_status),
            "testable_wires": sum(1 for v in wire_status.values() if v["status"] == "testable"),
            "power_candidate_wires": sum(1 for v in wire_status.values()
                                         if v["status"] == "power_candidate"),
            "discarded_wires": sum(1 for v in wire_status.values() if v["status"] == "discarded"),
            "no_path_wires": sum(1 for v in wire_status.values() if v["status"] == "no_path"),
            "detect_paths": len(detect_set),
        },
    })
    with ctx.path("power_candidates.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["wire_key", "path_id", "nominal_delay_ps"])
        for row in power_rows:
            w.writerow([row[0], row[1], repr(row[2])])
    write_json(ctx.path("trojans.json"), {
        "schema_version": "1",
        "trojans": [
            {"kind": s.kind.value, "target_net": s.target_net,
             "size_class": s.size_class.value, "delay_delta_ps": s.delay_delta_ps,
             "affected_path_ids": sorted(
                 design.paths[pi].id for pi in idx.paths_by_net.get(s.target_net, []))}
            for s in specs
        ],
        "affected_path_ids": sorted(affected),
    })
    write_json(ctx.path("lot.json"), lot_to_json(lot))
    return ["candidates.json", "power_candidates.csv", "trojans.json", "lot.json"]


def stage_cfst(ctx: RunContext) -> list[str]:
    """Measure every training and detection path on every die."""
    design, idx = ctx.design(), ctx.index()
    lot = ctx.lot()
    cf = ctx.cfst_config()

    measured_ids = sorted(set(ctx.detect_path_ids())
                          | {p.id for p in ctx.training_selection()})
    rows = np.array([idx.path_idx[pid] for pid in measured_ids])
    sim = LotSimulator(lot, idx)
    setup = idx.endpoint_setup[rows][:, None]

    slack_sum = None
    fail_any = None
    outputs = []
    raw_frames = []
    meas_frames = []
    for trial in range(cf.trials_per_die):
        true = sim.lot_true_delays(trial=trial)[rows, :] + setup
        measured, slack, fail = quantize_delays(true, cf)
        slack_sum = slack if slack_sum is None else slack_sum + slack
        fail_any = fail if fail_any is None else (fail_any | fail)
        if ctx.cfg["artifacts"]["write_raw_delays"]:
            raw_frames.append(pd.DataFrame({
                "die_id": np.repeat([d.die_id for d in lot.dies], len(measured_ids)),
                "path_id": np.tile(measured_ids, len(lot.dies)),
                "trial": trial,
                "true_delay_ps": true.T.ravel(),
            }))
        if ctx.cfg["artifacts"]["write_measurements"]:
            meas_frames.append(pd.DataFrame({
                "die_id": np.repeat([d.die_id for d in lot.dies], len(measured_ids)),
                "path_id": np.tile(measured_ids, len(lot.dies)),
                "measured_delay_ps": measured.T.ravel(),
                "measured_slack_ps": slack.T.ravel(),
            }))
    slack_mean = slack_sum / cf.trials_per_die  # NaN wherever any trial failed

    write_json(ctx.path("measure_paths.json"), {"path_ids": measured_ids})
    np.save(ctx.path("measured_slack.npy"), slack_mean)
    np.save(ctx.path("measured_fail.npy"), fail_any)
    outputs += ["measure_paths.json", "measured_slack.npy", "measured_fail.npy"]
    if raw_frames:
        _write_gz_csv(ctx.path("raw_delays.csv.gz"), pd.concat(raw_frames, ignore_index=True))
        outputs.append("raw_delays.csv.gz")
    if meas_frames:
        _write_gz_csv(ctx.path("measurements.csv.gz"), pd.concat(meas_frames, ignore_index=True))
        outputs.append("measurements.csv.gz")
    return outputs


def stage_bin(ctx: RunContext) -> list[str]:
    design, idx = ctx.design(), ctx.index()
    lot = ctx.lot()
    cf = ctx.cfst_config()
    ids, slack, fail = ctx.measured()
    b = int(ctx.cfg["binning"]["bins"])

    detect_ids = ctx.detect_path_ids()
    order = sorted(detect_ids, key=lambda pid: idx.path_nominal[idx.path_idx[pid]])
    n_probe = min(int(ctx.cfg["binning"]["probe_paths"]), len(order))
    stride = np.linspace(0, len(order) - 1, n_probe).astype(int)
    probe_ids = [order[i] for i in stride]
    row_of = {pid: i for i, pid in enumerate(ids)}
    probe_rows = [row_of[pid] for pid in probe_ids]
    probe_measured = cf.period_ps - slack[probe_rows, :]
    probe_measured = np.where(fail[probe_rows, :], cf.period_ps + cf.step_ps, probe_measured)

    bins = speed_bin(lot, [design.paths[idx.path_idx[p]] for p in probe_ids], cf, b,
                     idx, probe_measured=probe_measured)
    bins_doc = {
        "schema_version": "1",
        "probe_path_ids": probe_ids,
        "bins": [
            {"label": sb.label, "die_ids": list(sb.die_ids),
             "probe_stat_ps": {k: sb.probe_stat_ps[k] for k in sorted(sb.probe_stat_ps)}}
            for sb in bins
        ],
    }
    write_json(ctx.path("bins.json"), bins_doc)

    die_pos = {d.die_id: i for i, d in enumerate(lot.dies)}
    groups = {sb.label: [die_pos[i] for i in sb.die_ids] for sb in bins}
    if ctx.cfg["binning"]["include_unbinned"] and "All" not in groups:
        groups["All"] = list(range(len(lot.dies)))

    with ctx.path("mean_slack.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin", "path_id", "mu_slack_ps", "n_ok", "n_fail", "sd_slack_ps"])
        for label in ctx.bin_label_list():
            cols = groups[label]
            sub = slack[:, cols]
            fsub = fail[:, cols]
            n_fail = fsub.sum(axis=1)
            n_ok = fsub.shape[1] - n_fail
            with np.errstate(invalid="ignore"):
                mu = np.nanmean(np.where(fsub, np.nan, sub), axis=1)
                sd = np.nanstd(np.where(fsub, np.nan, sub), axis=1, ddof=1)
            for i, pid in enumerate(ids):
                w.writerow([label, pid, repr(float(mu[i])), int(n_ok[i]),
                            int(n_fail[i]), repr(float(sd[i]))])
    return ["bins.json", "mean_slack.csv"]


def _contamination_ids(ctx: RunContext, per: dict, k: int) -> list[str]:
    """k Trojan-affected measured paths, round-robin across victim nets so
    the injected rows do not cluster in feature space."""
    per_net = [sorted(t["affected_path_ids"])
               for t in read_json(ctx.path("trojans.json"))["trojans"]]
    ids_measured = set(ctx.measured()[0])

    def usable(pid):
        return (pid in ids_measured and pid in per
                and np.isfinite(per[pid]["mu"]) and per[pid]["n_fail"] == 0)

    chosen: list[str] = []
    rank = 0
    while len(chosen) < k and rank < max((len(l) for l in per_net), default=0):
        for lst in per_net:
            if rank < len(lst) and usable(lst[rank]) and lst[rank] not in chosen:
                chosen.append(lst[rank])
                if len(chosen) == k:
                    break
        rank += 1
    return chosen


def stage_trainset(ctx: RunContext) -> list[str]:
    design, idx = ctx.design(), ctx.index()
    gtm_p = ctx.gtm("pathspec")
    table = ctx.mean_slack_table()
    paths = ctx.training_selection()
    k = int(ctx.cfg["train"]["contamination_rows"])

    outputs = []
    for label in ctx.bin_label_list():
        per = table[label]
        keep = [p for p in paths if np.isfinite(per[p.id]["mu"]) and per[p.id]["n_fail"] == 0]
        X = ctx.features_for([p.id for p in keep])
        y = np.array([per[p.id]["mu"] - gtm_p[p.id].slack for p in keep])
        name = f"dataset_{label}.csv"
        ctx.path(name).write_text(dataset_to_csv([p.id for p in keep], X, y))
        outputs.append(name)
        if k > 0:
            troj = _contamination_ids(ctx, per, k)
            Xc = ctx.features_for(troj)
            yc = np.array([per[pid]["mu"] - gtm_p[pid].slack for pid in troj])
            cname = f"contamination_{label}.csv"
            ctx.path(cname).write_text(dataset_to_csv(troj, Xc, yc))
            outputs.append(cname)
    return outputs


def _train_config(ctx: RunContext, hidden=None, activation=None) -> TrainConfig:
    t = ctx.cfg["train"]
    return TrainConfig(
        learning_rate=float(t["learning_rate"]),
        epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        splits=tuple(float(s) for s in t["splits"]),
        patience=int(t["patience"]),
        seed=int(ctx.cfg["seed"]),
        hidden=tuple(hidden if hidden is not None else t["hidden"]),
        activation=activation or t["activation"],
    )


def _load_dataset(ctx: RunContext, label: str) -> Dataset:
    ids, X, y = dataset_from_csv(ctx.path(f"dataset_{label}.csv").read_text())
    return Dataset(tuple(ids), X, y)


def stage_train(ctx: RunContext) -> list[str]:
    outputs = []
    hidden = activation = None
    if ctx.cfg["train"]["arch_search"]:
        doc = read_json(ctx.path("sweep_best.json")) if ctx.path("sweep_best.json").exists() else None
        if doc is None:
            outputs += stage_sweep(ctx)
            doc = read_json(ctx.path("sweep_best.json"))
        hidden, activation = doc["hidden"], doc["activation"]

    stats_doc = {}
    for label in ctx.bin_label_list():
        ds = _load_dataset(ctx, label)
        extra = None
        cpath = ctx.path(f"contamination_{label}.csv")
        if int(ctx.cfg["train"]["contamination_rows"]) > 0 and cpath.exists():
            _, Xc, yc = dataset_from_csv(cpath.read_text())
            extra = (Xc, yc)
        diag: dict = {}
        model, stats = train(ds, _train_config(ctx, hidden, activation),
                             extra_train_rows=extra, diagnostics=diag)
        name = f"model_{label}.json"
        write_json(ctx.path(name), model_to_json(model))
        outputs.append(name)
        stats_doc[label] = {
            "mu_ps": stats.mu_ps,
            "sigma_nn_ps": stats.sigma_nn_ps,
            "sigma_val_ps": diag["sigma_val_ps"],
            "raw_sigma_test_ps": diag["raw_sigma_test_ps"],
            "threshold_4sigma_ps": threshold_4sigma(stats.sigma_nn_ps),
            "n_rows": len(ds),
            "n_split": list(diag["n_split"]),
        }
    write_json(ctx.path("watchdog_stats.json"), stats_doc)
    return outputs + ["watchdog_stats.json"]


def stage_sweep(ctx: RunContext) -> list[str]:
    """Architecture sweep on the first bin's dataset; best topology wins."""
    s = ctx.cfg["train"]["search"]
    space = ArchSearchSpace(
        hidden_layer_counts=tuple(s["layers"]),
        widths=tuple(s["widths"]),
        activations=tuple(s["activations"]),
    )
    label = ctx.bin_label_list()[0]
    ds = _load_dataset(ctx, label)
    best_cfg, best_stats, log = arch_search(space, ds, _train_config(ctx))
    with ctx.path("sweep_log.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["n_hidden_layers", "widths", "activation", "val_mse", "sigma_nn_ps"])
        for row in log:
            w.writerow([row["n_hidden_layers"], row["widths"], row["activation"],
                        repr(row["val_mse"]), repr(row["sigma_nn_ps"])])
    write_json(ctx.path("sweep_best.json"), {
        "hidden": list(best_cfg.hidden),
        "activation": best_cfg.activation,
        "sigma_nn_ps": best_stats.sigma_nn_ps,
        "swept_on_bin": label,
    })
    return ["sweep_log.csv", "sweep_best.json"]


def _modes(ctx: RunContext, only: str | None = None):
    names = ctx.cfg["detect"]["modes"] if only is None else [only]
    return [DetectionMode(m) for m in names]


def stage_detect(ctx: RunContext, only_mode: str | None = None) -> list[str]:
    design, idx = ctx.design(), ctx.index()
    table = ctx.mean_slack_table()
    detect_ids = ctx.detect_path_ids()
    gtms = {"ssta": ctx.gtm("global"), "sgtm": ctx.gtm("pathspec"),
            "ngtm": ctx.gtm("pathspec")}
    feats = ctx.features_for(detect_ids)
    feat_of = {pid: feats[i] for i, pid in enumerate(detect_ids)}
    fixed_thr = float(ctx.cfg["detect"]["fixed_threshold_ps"])
    stats_doc = read_json(ctx.path("watchdog_stats.json"))

    outputs = []
    real_labels = set(bin_labels(int(ctx.cfg["binning"]["bins"])))
    for mode in _modes(ctx, only_mode):
        gtm = gtms[mode.value]
        doc = {"schema_version": "1", "mode": mode.value, "bins": {}}
        agg: set[str] = set()
        agg_unbinned: set[str] = set()
        for label in ctx.bin_label_list():
            per = table[label]
            ds_ids = [pid for pid in
                      dataset_from_csv(ctx.path(f"dataset_{label}.csv").read_text())[0]]
            shift = static_shift([(gtm[pid].slack, per[pid]["mu"]) for pid in ds_ids])
            obs = []
            for pid in detect_ids:
                rec = per[pid]
                obs.append(PathObservation(
                    path_id=pid,
                    gtm_slack_ps=gtm[pid].slack,
                    mean_measured_slack_ps=rec["mu"] if np.isfinite(rec["mu"]) else 0.0,
                    features=feat_of[pid] if mode == DetectionMode.NGTM else None,
                    fails_at_nominal=rec["n_fail"] > 0,
                ))
            if mode == DetectionMode.NGTM:
                model = model_from_json(read_json(ctx.path(f"model_{label}.json")))
                thr = threshold_4sigma(stats_doc[label]["sigma_nn_ps"])
                rep = detect(obs, mode, thr, label, model=model)
            else:
                rep = detect(obs, mode, fixed_thr, label, static_shift_ps=shift)
            doc["bins"][label] = {
                "threshold_ps": rep.threshold_ps,
                "static_shift_ps": shift,
                "verdicts": [
                    {"path_id": v.path_id, "score_ps": v.score_ps, "flagged": v.flagged}
                    for v in rep.verdicts
                ],
            }
            if label in real_labels:
                agg |= rep.flagged_ids
            else:
                agg_unbinned = rep.flagged_ids
        doc["aggregate_flagged"] = sorted(agg)
        doc["unbinned_flagged"] = sorted(agg_unbinned)
        name = f"detection_{mode.value}.json"
        write_json(ctx.path(name), doc)
        outputs.append(name)
    return outputs


def stage_roc(ctx: RunContext, only_mode: str | None = None) -> list[str]:
    affected = ctx.affected_ids()
    outputs = []
    youden_doc: dict = {"schema_version": "1", "modes": {}}
    if ctx.path("youden.json").exists():
        youden_doc = read_json(ctx.path("youden.json"))
    for mode in _modes(ctx, only_mode):
        det = read_json(ctx.path(f"detection_{mode.value}.json"))
        youden_doc["modes"].setdefault(mode.value, {})
        for label, bin_doc in sorted(det["bins"].items()):
            scores = np.array([v["score_ps"] for v in bin_doc["verdicts"]])
            labels = np.array([v["path_id"] in affected for v in bin_doc["verdicts"]])
            entry: dict = {"threshold_used_ps": bin_doc["threshold_ps"]}
            try:
                points, t_star, j = roc_and_youden(scores, labels)
                entry.update({"status": "ok", "youden_threshold_ps": t_star, "youden_j": j})
                name = f"roc_{mode.value}_{label}.csv"
                with ctx.path(name).open("w", newline="") as f:
                    w = csv.writer(f, lineterminator="\n")
                    w.writerow(["threshold_ps", "tpr", "fpr"])
                    for t, tpr, fpr in points:
                        w.writerow([repr(float(t)), repr(float(tpr)), repr(float(fpr))])
                outputs.append(name)
            except SingleClass:
                entry.update({"status": "single_class"})
            youden_doc["modes"][mode.value][label] = entry
    write_json(ctx.path("youden.json"), youden_doc)
    return outputs + ["youden.json"]


def _rate(x) -> str:
    return "N/A" if x is None else f"{x:.2f}"


def stage_report(ctx: RunContext, only_mode: str | None = None) -> list[str]:
    affected = ctx.affected_ids()
    detect_ids = ctx.detect_path_ids()
    gt = {pid: (pid in affected) for pid in detect_ids}
    n_troj = sum(gt.values())
    n_clean = len(detect_ids) - n_troj
    stats_doc = read_json(ctx.path("watchdog_stats.json"))
    youden = read_json(ctx.path("youden.json"))["modes"]

    metrics_doc: dict = {"schema_version": "1",
                         "counts": {"detect_paths": len(detect_ids),
                                    "trojan_paths": n_troj, "clean_paths": n_clean},
                         "watchdog": stats_doc, "modes": {}}
    for mode in _modes(ctx, only_mode):
        det = read_json(ctx.path(f"detection_{mode.value}.json"))
        mode_doc: dict = {"bins": {}}
        for label, bin_doc in sorted(det["bins"].items()):
            flagged = {v["path_id"] for v in bin_doc["verdicts"] if v["flagged"]}
            tpo = 100.0 * len([p for p in flagged if gt[p]]) / n_troj if n_troj else None
            fpo = 100.0 * len([p for p in flagged if not gt[p]]) / n_clean if n_clean else None
            mode_doc["bins"][label] = {
                "tpo": tpo, "fpo": fpo,
                "threshold_ps": bin_doc["threshold_ps"],
                "static_shift_ps": bin_doc["static_shift_ps"],
                "youden": youden.get(mode.value, {}).get(label, {}),
            }
        for key, field in (("aggregate", "aggregate_flagged"),
                           ("unbinned", "unbinned_flagged")):
            flagged = set(det[field])
            if key == "unbinned" and not ctx.cfg["binning"]["include_unbinned"]:
                continue
            mode_doc[key] = {
                "tpo": 100.0 * len([p for p in flagged if gt[p]]) / n_troj if n_troj else None,
                "fpo": 100.0 * len([p for p in flagged if not gt[p]]) / n_clean if n_clean else None,
            }
        metrics_doc["modes"][mode.value] = mode_doc
    write_json(ctx.path("metrics.json"), metrics_doc)

    # residual histograms per bin: watchdog error vs mean-shifted raw shift
    outputs = ["metrics.json", "report.txt"]
    for label in ctx.bin_label_list():
        ds = _load_dataset(ctx, label)
        model = model_from_json(read_json(ctx.path(f"model_{label}.json")))
        nn_resid = ds.y - model.predict_matrix(ds.X)
        raw = ds.y - ds.y.mean()
        lo = float(min(nn_resid.min(), raw.min()))
        hi = float(max(nn_resid.max(), raw.max()))
        edges = np.linspace(lo, hi, 61)
        nn_c, _ = np.histogram(nn_resid, bins=edges)
        raw_c, _ = np.histogram(raw, bins=edges)
        name = f"hist_{label}.csv"
        with ctx.path(name).open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["bin_left_ps", "bin_right_ps", "watchdog_error_count",
                        "mean_shifted_raw_count"])
            for i in range(60):
                w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                            int(nn_c[i]), int(raw_c[i])])
        outputs.append(name)

    lines = ["Delay side-channel Trojan screen, synthetic-silicon run", ""]
    lines.append(f"detect paths: {len(detect_ids)} "
                 f"(trojan {n_troj}, clean {n_clean})")
    lines.append("")
    lines.append("watchdog residuals per speed bin (held-out, ps):")
    for label, s in sorted(stats_doc.items()):
        lines.append(f"  {label:8s} mu {s['mu_ps']:+7.2f}  sigma {s['sigma_nn_ps']:6.2f}  "
                     f"raw sd {s['raw_sigma_test_ps']:6.2f}  4*sigma {s['threshold_4sigma_ps']:6.2f}")
    for mode_name, mode_doc in sorted(metrics_doc["modes"].items()):
        lines.append("")
        lines.append(f"mode {mode_name}:")
        for label, b in sorted(mode_doc["bins"].items()):
            y = b["youden"]
            ytxt = (f"youden {y['youden_threshold_ps']:.2f} (J {y['youden_j']:.3f})"
                    if y.get("status") == "ok" else "youden N/A")
            lines.append(f"  {label:8s} TPo {_rate(b['tpo']):>6s}  FPo {_rate(b['fpo']):>6s}  "
                         f"threshold {b['threshold_ps']:6.2f}  {ytxt}")
        agg = mode_doc.get("aggregate", {})
        lines.append(f"  aggregate (any bin)  TPo {_rate(agg.get('tpo')):>6s}  "
                     f"FPo {_rate(agg.get('fpo')):>6s}")
        if "unbinned" in mode_doc:
            ub = mode_doc["unbinned"]
            lines.append(f"  unbinned             TPo {_rate(ub.get('tpo')):>6s}  "
                         f"FPo {_rate(ub.get('fpo')):>6s}")
    lines.append("")
    lines.append("all values are synthetic-model outputs; see metrics.json for detail")
    ctx.path("report.txt").write_text("\n".join(lines) + "\n")
    return outputs


STAGES = {
    "gen": stage_gen,
    "sta": stage_sta,
    "fab": stage_fab,
    "cfst": stage_cfst,
    "bin": stage_bin,
    "trainset": stage_trainset,
    "train": stage_train,
    "sweep": stage_sweep,
    "detect": stage_detect,
    "roc": stage_roc,
    "report": stage_report,
}


def _stage_record_path(ctx: RunContext, name: str) -> Path:
    return ctx.path(f".stage_{name}.json")


def _stage_is_current(ctx: RunContext, name: str, chash: str) -> bool:
    rec_path = _stage_record_path(ctx, name)
    if not rec_path.exists():
        return False
    rec = read_json(rec_path)
    if rec.get("config_hash") != chash:
        return False
    for fname, sha in rec.get("outputs", {}).items():
        p = ctx.path(fname)
        if not p.exists() or sha256_file(p) != sha:
            return False
    return True


def run_stage(ctx: RunContext, name: str, resume: bool = False,
              only_mode: str | None = None) -> bool:
    """Run one stage; returns False when resumed (skipped)."""
    chash = config_hash(ctx.cfg)
    if resume and _stage_is_current(ctx, name, chash):
        return False
    fn = STAGES[name]
    try:
        if name in ("detect", "roc", "report"):
            outputs = fn(ctx, only_mode)
        else:
            outputs = fn(ctx)
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(name, exc) from exc
    write_json(_stage_record_path(ctx, name), {
        "stage": name,
        "config_hash": chash,
        "outputs": {f: sha256_file(ctx.path(f)) for f in outputs},
    })
    return True


def run_experiment(config_doc: dict, out_dir, resume: bool = False,
                   only_mode: str | None = None) -> Path:
    """Validate the config and run the full pipeline into out_dir."""
    cfg = validate_config(config_doc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(out, cfg)
    write_json(ctx.path("resolved_config.json"), cfg)
    for name in STAGE_ORDER:
        run_stage(ctx, name, resume=resume, only_mode=only_mode)
    return out
