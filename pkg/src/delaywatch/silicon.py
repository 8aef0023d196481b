"""Ground-truth silicon delay model for virtual fabrication lots.

Stands in for transistor-level simulation: a die's true path delay composes
the nominal first-order gate model with

  * corner skew: transistors sped up by about X percent, metal capacitance
    derated by Y percent. The shift is deliberately non-uniform: each cell
    kind, drive strength, metal layer and placement region drifts by its own
    factor around the nominal X/Y, because a uniform shift would be fully
    absorbed by a single static correction and no per-path tracking would
    ever be needed.
  * a persistent per-die multiplier on all transistor delays (lot
    derivatives, default plus/minus one percent),
  * independent per-gate random process variation (one lognormal delay
    multiplier per gate per die),
  * per-measurement supply noise (a truncated-normal voltage drop per gate
    occurrence, delay scaling as (v_nom / v) ** alpha),
  * inserted Trojans: a payload in series on its victim net adds its own
    gate delay plus input-pin load on the victim driver; a trigger tap adds
    capacitive load on the observed net's driver.

Everything is a pure function of (design, configuration, seeds).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import EmptyLot, UnknownNet
from .library import LAYERS, CellKind, DriveStrength
from .netlist import Design, DesignIndex, TimingPath

_PV_TAG = 0x51C0
_VOLT_TAG = 0x7019
_LOT_TAG = 0x10F7
_DRIFT_TAG = 0xD21F

# Non-uniform drift factors (mean about 1.0 over a typical cell mix).
# Small cells drift hardest; wide upper metals barely move.
KIND_DRIFT = {
    CellKind.INV: 1.35,
    CellKind.NAND2: 1.00,
    CellKind.NOR2: 0.80,
    CellKind.AOI: 0.65,
    CellKind.BUF: 1.20,
    CellKind.DFF: 0.80,
}

STRENGTH_DRIFT = {
    DriveStrength.X0: 1.45,
    DriveStrength.X1: 1.25,
    DriveStrength.X2: 1.10,
    DriveStrength.X4: 0.95,
    DriveStrength.X8: 0.82,
    DriveStrength.X16: 0.72,
    DriveStrength.X32: 0.62,
}

LAYER_DRIFT = {
    "M1": 1.60, "M2": 1.35, "M3": 1.15, "M4": 1.00,
    "M5": 0.85, "M6": 0.70, "M7": 0.15,
}

REGION_DRIFT_SPAN = 0.22  # per-region jitter on the transistor drift factor

TP_PAYLOAD_PIN_CAP_FF = 2.4  # input pin of the series payload cell


@dataclass(frozen=True)
class ProcessSkew:
    """Corner skew: x_pct speeds transistors, y_pct derates metal cap."""

    x_pct: float = 0.0
    y_pct: float = 0.0

    def __post_init__(self):
        if abs(self.x_pct) > 20 or abs(self.y_pct) > 20:
            raise ValueError("skew percentages outside the plus/minus 20 sanity bound")


@dataclass(frozen=True)
class Die:
    die_id: str
    persistent_mult: float
    rng_stream_seed: int


@dataclass(frozen=True)
class RandomPvModel:
    """Per-gate random delay multiplier: lognormal, unit mean, sd sigma_d."""

    sigma_d: float = 0.03

    def __post_init__(self):
        if self.sigma_d < 0:
            raise ValueError("sigma_d must be >= 0")


@dataclass(frozen=True)
class VoltageNoiseModel:
    """Supply-drop model: per-gate truncated-normal drop fraction.

    A gate's mean drop is mu_drop_frac scaled by its placement-region
    ir_weight (the design-time supply analysis knows this map). Sampled
    drops stay in [0, max_drop_frac], so gate voltage stays above
    0.7 * v_nom for any max_drop_frac < 0.3.
    """

    v_nom: float = 0.9
    mu_drop_frac: float = 0.03
    sigma_drop_frac: float = 0.015
    max_drop_frac: float = 0.12
    alpha: float = 1.3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if not 0 <= self.max_drop_frac < 0.3:
            raise ValueError("max_drop_frac must be in [0, 0.3)")
        if self.sigma_drop_frac < 0 or self.mu_drop_frac < 0:
            raise ValueError("drop fractions must be >= 0")


class TrojanKind(str, Enum):
    TP = "TP"  # payload in series on the victim net
    TT = "TT"  # trigger tap loading the observed net


class TrojanSize(str, Enum):
    SMALL = "Small"
    MEDIUM = "Medium"
    LARGE = "Large"


DEFAULT_TROJAN_DELTA = {
    TrojanKind.TP: {TrojanSize.SMALL: 20.0, TrojanSize.MEDIUM: 45.0, TrojanSize.LARGE: 90.0},
    TrojanKind.TT: {TrojanSize.SMALL: 5.0, TrojanSize.MEDIUM: 10.0, TrojanSize.LARGE: 20.0},
}


@dataclass(frozen=True)
class TrojanSpec:
    kind: TrojanKind
    target_net: str
    size_class: TrojanSize
    delay_delta_ps: float

    def __post_init__(self):
        if self.delay_delta_ps <= 0:
            raise ValueError("delay_delta_ps must be > 0")


def make_trojan(kind: TrojanKind, target_net: str, size_class: TrojanSize,
                delay_delta_ps: float | None = None) -> TrojanSpec:
    if delay_delta_ps is None:
        delay_delta_ps = DEFAULT_TROJAN_DELTA[kind][size_class]
    return TrojanSpec(kind, target_net, size_class, delay_delta_ps)


@dataclass(frozen=True)
class FabLot:
    """A set of virtual dies sharing one skew corner and one Trojan set."""

    design: Design  # with Trojans applied
    skew: ProcessSkew
    dies: tuple[Die, ...]
    trojans: tuple[TrojanSpec, ...]
    seed: int
    pv: RandomPvModel = field(default_factory=RandomPvModel)
    voltage: VoltageNoiseModel = field(default_factory=VoltageNoiseModel)


@dataclass(frozen=True)
class NoiseSample:
    """Per-slot silicon noise along one path (slot = gate occurrence)."""

    gates: tuple[str, ...]
    pv_mult: np.ndarray
    voltage_v: np.ndarray


# ---------------------------------------------------------------------------
# trojan insertion


def insert_trojan(design: Design, spec: TrojanSpec) -> Design:
    """Annotate the fabricated silicon with one Trojan.

    The visible netlist (gates, wires, paths, features, timing tables) is
    unchanged; only the silicon delay model consumes the annotation.
    """
    drivers = {g.id for g in design.gates}
    if spec.target_net not in drivers:
        raise UnknownNet(f"no net driven by '{spec.target_net}'")
    return replace(design, trojans=design.trojans + (spec,))


def trojan_affected_path_ids(design: Design, index: DesignIndex | None = None) -> set[str]:
    """Ground truth for scoring only: ids of paths through any Trojan net."""
    index = index or DesignIndex(design)
    hit: set[str] = set()
    for spec in design.trojans:
        for pi in index.paths_by_net.get(spec.target_net, ()):
            hit.add(design.paths[pi].id)
    return hit


# ---------------------------------------------------------------------------
# lot construction


def make_lot(design: Design, skew: ProcessSkew, n_dies: int,
             trojans: tuple[TrojanSpec, ...] | list[TrojanSpec], seed: int, *,
             persistent_offsets: tuple[float, ...] = (-0.01, 0.0, 0.01),
             pv: RandomPvModel | None = None,
             voltage: VoltageNoiseModel | None = None) -> FabLot:
    """Fabricate a lot: every die carries the same skew and Trojan set.

    Dies cycle through the persistent derivatives, so a lot splits about
    evenly across them. Die seeds derive from (lot seed, die index).
    """
    if n_dies < 1:
        raise EmptyLot(f"n_dies must be >= 1, got {n_dies}")
    fabbed = design
    for spec in trojans:
        fabbed = insert_trojan(fabbed, spec)
    dies = []
    for i in range(n_dies):
        stream = int(np.random.SeedSequence((_LOT_TAG, seed, i)).generate_state(1)[0])
        mult = 1.0 + persistent_offsets[i % len(persistent_offsets)]
        dies.append(Die(f"d{i:04d}", round(mult, 6), stream))
    return FabLot(design=fabbed, skew=skew, dies=tuple(dies),
                  trojans=tuple(fabbed.trojans), seed=seed,
                  pv=pv or RandomPvModel(), voltage=voltage or VoltageNoiseModel())


def lot_to_json(lot: FabLot) -> dict:
    return {
        "schema_version": "1",
        "seed": lot.seed,
        "skew": {"x_pct": lot.skew.x_pct, "y_pct": lot.skew.y_pct},
        "pv": {"sigma_d": lot.pv.sigma_d},
        "voltage": {
            "v_nom": lot.voltage.v_nom,
            "mu_drop_frac": lot.voltage.mu_drop_frac,
            "sigma_drop_frac": lot.voltage.sigma_drop_frac,
            "max_drop_frac": lot.voltage.max_drop_frac,
            "alpha": lot.voltage.alpha,
        },
        "dies": [
            {"die_id": d.die_id, "persistent_mult": d.persistent_mult,
             "rng_stream_seed": d.rng_stream_seed}
            for d in lot.dies
        ],
        "trojans": [
            {"kind": t.kind.value, "target_net": t.target_net,
             "size_class": t.size_class.value, "delay_delta_ps": t.delay_delta_ps}
            for t in lot.trojans
        ],
    }


def lot_from_json(design: Design, doc: dict) -> FabLot:
    trojans = tuple(
        TrojanSpec(TrojanKind(t["kind"]), t["target_net"],
                   TrojanSize(t["size_class"]), t["delay_delta_ps"])
        for t in doc["trojans"])
    fabbed = design
    for spec in trojans:
        fabbed = insert_trojan(fabbed, spec)
    return FabLot(
        design=fabbed,
        skew=ProcessSkew(doc["skew"]["x_pct"], doc["skew"]["y_pct"]),
        dies=tuple(Die(d["die_id"], d["persistent_mult"], d["rng_stream_seed"])
                   for d in doc["dies"]),
        trojans=trojans,
        seed=doc["seed"],
        pv=RandomPvModel(doc["pv"]["sigma_d"]),
        voltage=VoltageNoiseModel(**doc["voltage"]),
    )


# ---------------------------------------------------------------------------
# drift factors


def _region_drift_jitter(skew: ProcessSkew, n_regions: int) -> np.ndarray:
    """Deterministic per-region drift modulation for one corner."""
    if skew.x_pct == 0 and skew.y_pct == 0:
        return np.ones(n_regions)
    key = (_DRIFT_TAG,
           int(round(skew.x_pct * 100)) + 10_000,
           int(round(skew.y_pct * 100)) + 10_000)
    rng = np.random.default_rng(np.random.SeedSequence(key))
    return 1.0 + REGION_DRIFT_SPAN * rng.uniform(-1.0, 1.0, size=n_regions)


def transistor_speed_factors(index: DesignIndex, skew: ProcessSkew) -> np.ndarray:
    """Per-gate multiplier on intrinsic delay under the corner skew."""
    n_regions = max((g.region for g in index.design.gates), default=0) + 1
    jitter = _region_drift_jitter(skew, n_regions)
    kappa = np.array([
        KIND_DRIFT[k] * STRENGTH_DRIFT[s] * jitter[g.region]
        for k, s, g in zip(index.kind, index.strength, index.design.gates)
    ])
    return 1.0 - 0.01 * skew.x_pct * kappa


def silicon_gate_loads(index: DesignIndex, skew: ProcessSkew,
                       trojans: tuple[TrojanSpec, ...]) -> np.ndarray:
    """Per-gate driven capacitance: derated metal plus Trojan extras (fF)."""
    layer_derate = np.array(
        [1.0 - 0.01 * skew.y_pct * LAYER_DRIFT[l.value] for l in LAYERS])
    loads = index.pin_load + index.wire_cap_layer @ layer_derate
    for spec in trojans:
        gi = index.gate_idx[spec.target_net]
        if spec.kind == TrojanKind.TP:
            loads[gi] += TP_PAYLOAD_PIN_CAP_FF
        else:
            lc = index.load_coeff[gi]
            if lc > 0:
                loads[gi] += spec.delay_delta_ps / lc
    return loads


def trojan_series_delta(index: DesignIndex, trojans: tuple[TrojanSpec, ...]) -> np.ndarray:
    """Per-path additive payload delay (ps); trigger taps add none."""
    delta = np.zeros(index.n_paths)
    for spec in trojans:
        if spec.kind != TrojanKind.TP:
            continue
        for pi in index.paths_by_net.get(spec.target_net, ()):
            delta[pi] += spec.delay_delta_ps
    return delta


def tt_effective_delta(index: DesignIndex, spec: TrojanSpec) -> float:
    """Stage-delay increase a trigger tap imposes on paths through its net."""
    gi = index.gate_idx[spec.target_net]
    lc = index.load_coeff[gi]
    return float(lc * (spec.delay_delta_ps / lc)) if lc > 0 else 0.0


# ---------------------------------------------------------------------------
# noise sampling


def die_pv_multipliers(lot: FabLot, die: Die, index: DesignIndex) -> np.ndarray:
    """Random-PV delay multipliers for every gate of one die (silicon-fixed)."""
    sigma = lot.pv.sigma_d
    if sigma == 0:
        return np.ones(len(index.design.gates))
    rng = np.random.default_rng(np.random.SeedSequence((_PV_TAG, die.rng_stream_seed)))
    z = rng.standard_normal(len(index.design.gates))
    return np.exp(sigma * z - 0.5 * sigma * sigma)


def _sample_drop_frac(model: VoltageNoiseModel, mean_frac: np.ndarray,
                      uniforms: np.ndarray) -> np.ndarray:
    """Truncated-normal drop fractions via inverse CDF (vectorized)."""
    sigma = model.sigma_drop_frac
    hi = model.max_drop_frac
    if sigma == 0:
        return np.clip(mean_frac, 0.0, hi)
    a = ndtr((0.0 - mean_frac) / sigma)
    b = ndtr((hi - mean_frac) / sigma)
    u = a + uniforms * (b - a)
    return mean_frac + sigma * ndtri(u)


def sample_noise(lot: FabLot, die: Die, path: TimingPath, trial: int,
                 index: DesignIndex | None = None) -> NoiseSample:
    """Silicon noise for one measurement of one path on one die.

    PV multipliers are a property of the die (identical across trials and
    across paths sharing a gate); gate voltages re-sample per trial. The
    result is a deterministic function of (die seed, path id, trial).
    """
    if trial < 0:
        raise ValueError("trial must be >= 0")
    index = index or DesignIndex(lot.design)
    gates = path.all_gates()
    gidx = np.array([index.gate_idx[g] for g in gates], dtype=np.int64)

    pv = die_pv_multipliers(lot, die, index)[gidx]

    model = lot.voltage
    mean_frac = model.mu_drop_frac * index.ir_weight[gidx]
    if model.sigma_drop_frac == 0 and model.mu_drop_frac == 0:
        volts = np.full(len(gates), model.v_nom)
    else:
        key = (_VOLT_TAG, die.rng_stream_seed, zlib.crc32(path.id.encode()), trial)
        rng = np.random.default_rng(np.random.SeedSequence(key))
        drops = _sample_drop_frac(model, mean_frac, rng.random(len(gates)))
        volts = model.v_nom * (1.0 - drops)
    return NoiseSample(gates=gates, pv_mult=pv, voltage_v=volts)


# ---------------------------------------------------------------------------
# true delay


def true_path_delay(path: TimingPath, lot: FabLot, die: Die, noise: NoiseSample,
                    index: DesignIndex | None = None) -> float:
    """Ground-truth delay of one path on one die under one noise sample.

    Sums, over every gate occurrence on the three sub-paths, the intrinsic
    delay scaled by corner drift, persistent multiplier, random PV and the
    voltage factor (v_nom / v) ** alpha, plus the load term against the
    derated silicon capacitance, plus any series Trojan payload delay.
    """
    index = index or DesignIndex(lot.design)
    speed = transistor_speed_factors(index, lot.skew)
    loads = silicon_gate_loads(index, lot.skew, lot.trojans)
    series = trojan_series_delta(index, lot.trojans)

    gidx = np.array([index.gate_idx[g] for g in noise.gates], dtype=np.int64)
    vfac = (lot.voltage.v_nom / noise.voltage_v) ** lot.voltage.alpha
    transistor = (index.intrinsic[gidx] * speed[gidx]
                  * die.persistent_mult * noise.pv_mult * vfac)
    load_term = index.load_coeff[gidx] * loads[gidx]
    total = float(np.sum(transistor + load_term) + series[index.path_idx[path.id]])
    if total <= 0:
        raise AssertionError("silicon delay must be strictly positive")
    return total


class LotSimulator:
    """Vectorized lot measurement: true path delays for many dies at once.

    One rng stream per (die, trial) drives the per-slot voltage draws in
    canonical path order, so a whole-lot simulation is a pure function of
    (design, lot config, seeds). Bit-for-bit it is a different stream from
    sample_noise (which isolates one path); both are deterministic.
    """

    def __init__(self, lot: FabLot, index: DesignIndex | None = None):
        self.lot = lot
        self.index = index or DesignIndex(lot.design)
        self.speed = transistor_speed_factors(self.index, lot.skew)
        self.loads = silicon_gate_loads(self.index, lot.skew, lot.trojans)
        self.series = trojan_series_delta(self.index, lot.trojans)
        idx = self.index
        self.slot_transistor_base = idx.intrinsic[idx.slot_gate] * self.speed[idx.slot_gate]
        self.path_load_term = np.bincount(
            idx.slot_path,
            weights=(idx.load_coeff * self.loads)[idx.slot_gate],
            minlength=idx.n_paths,
        )
        self.slot_mean_drop = lot.voltage.mu_drop_frac * idx.ir_weight[idx.slot_gate]

    def die_true_delays(self, die: Die, trial: int = 0) -> np.ndarray:
        """True delay of every enumerated path on one die (ps)."""
        idx = self.index
        model = self.lot.voltage
        pv = die_pv_multipliers(self.lot, die, idx)
        if model.sigma_drop_frac == 0 and model.mu_drop_frac == 0:
            vfac = np.ones(len(idx.slot_gate))
        else:
            key = (_VOLT_TAG, die.rng_stream_seed, trial)
            rng = np.random.default_rng(np.random.SeedSequence(key))
            drops = _sample_drop_frac(model, self.slot_mean_drop,
                                      rng.random(len(idx.slot_gate)))
            vfac = (1.0 - drops) ** (-model.alpha)
        slot_vals = self.slot_transistor_base * pv[idx.slot_gate] * die.persistent_mult * vfac
        transistor = np.bincount(idx.slot_path, weights=slot_vals, minlength=idx.n_paths)
        return transistor + self.path_load_term + self.series

    def lot_true_delays(self, trial: int = 0) -> np.ndarray:
        """(n_paths, n_dies) matrix of true delays."""
        cols = [self.die_true_delays(d, trial) for d in self.lot.dies]
        return np.stack(cols, axis=1)
