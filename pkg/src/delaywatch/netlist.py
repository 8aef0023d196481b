"""Gate-level design model and synthetic design generation.

The design is a layered DAG of combinational cells between registers, plus a
small buffered clock tree. Every register endpoint owns an enumerated set of
timing paths; each path is a launch-clock / capture-clock / data triple of
sub-paths. Pin-to-pin wires (one per sink pin) carry per-layer routed
segments, so wire capacitance and per-layer lengths are first-class.

Delay model is first order: stage delay of a driver is its intrinsic delay
plus load_coeff times the total capacitance it drives (sink pins plus routed
metal of its output net). A path's nominal delay is the sum of the stage
delays of every gate on its three sub-paths.

Generation is a pure function of (config, seed): rerunning with the same
inputs yields a byte-identical serialization.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import ConfigTooSmall, NoPathThroughWire
from .library import (
    KIND_ARITY,
    LAYER_CAP_PER_UM,
    LAYER_MEDIAN_LEN,
    LAYER_RES_PER_UM,
    LAYERS,
    STRENGTHS,
    CellKind,
    DriveStrength,
    intrinsic_delay,
    load_coeff,
    pin_cap,
)

SCHEMA_VERSION = "1"

CLOCK_PORT = "clk"


@dataclass(frozen=True)
class Gate:
    """One placed cell instance. setup_ps is nonzero only for DFFs."""

    id: str
    cell_kind: CellKind
    drive_strength: DriveStrength
    intrinsic_delay: float  # ps
    load_coeff: float       # ps/fF
    pin_cap: float          # fF
    region: int = 0
    ir_weight: float = 1.0  # relative local supply-drop severity
    setup_ps: float = 0.0

    def __post_init__(self):
        if self.intrinsic_delay <= 0:
            raise ValueError(f"{self.id}: intrinsic_delay must be > 0")
        if self.load_coeff < 0:
            raise ValueError(f"{self.id}: load_coeff must be >= 0")


@dataclass(frozen=True)
class WireSegment:
    layer: str          # M1..M7
    length_um: float
    cap_per_um: float   # fF/um
    res_per_um: float   # ohm/um

    def __post_init__(self):
        if self.length_um < 0:
            raise ValueError("segment length must be >= 0")
        if self.layer not in {l.value for l in LAYERS}:
            raise ValueError(f"unknown layer {self.layer}")

    @property
    def cap_ff(self) -> float:
        return self.length_um * self.cap_per_um


@dataclass(frozen=True)
class P2PWire:
    """Point-to-point branch of a net: driver output pin to one sink pin.

    A net with fanout k contributes k of these. The sink pin is unique per
    wire (every input pin has exactly one driver), so it doubles as the
    wire's key.
    """

    driver_pin: str             # "g0012.Y" or the clock port
    sink_pin: str               # "g0044.A0", "r0003.D", "r0003.CK"
    segments: tuple[WireSegment, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a P2P wire needs at least one segment")
        if self.driver_cell == self.sink_cell:
            raise ValueError("driver and sink must be distinct cells")

    @property
    def key(self) -> str:
        return self.sink_pin

    @property
    def driver_cell(self) -> str:
        return self.driver_pin.split(".")[0]

    @property
    def sink_cell(self) -> str:
        return self.sink_pin.split(".")[0]

    @property
    def cap_ff(self) -> float:
        return sum(s.cap_ff for s in self.segments)


class SubPathKind(str, Enum):
    LAUNCH_CLOCK = "LP"
    CAPTURE_CLOCK = "CP"
    DATA = "DP"


@dataclass(frozen=True)
class SubPath:
    """Ordered gate chain of one path portion, with the wires it traverses.

    With n gates there are n wires: wire i leaves gate i, and the last wire
    lands on the portion's terminal pin (a register clock or data pin).
    """

    kind: SubPathKind
    gates: tuple[str, ...]
    wires: tuple[str, ...]  # wire keys (sink pins)

    def __post_init__(self):
        if self.gates and len(self.wires) != len(self.gates):
            raise ValueError("sub-path must carry one wire per gate")


@dataclass(frozen=True)
class TimingPath:
    id: str
    lp: SubPath
    cp: SubPath
    dp: SubPath
    endpoint_setup: float  # ps
    endpoint_register: str

    def __post_init__(self):
        if self.endpoint_setup <= 0:
            raise ValueError("endpoint setup must be > 0")

    def all_gates(self):
        return self.lp.gates + self.cp.gates + self.dp.gates


@dataclass(frozen=True)
class Design:
    """Immutable netlist plus its enumerated timing paths.

    `trojans` holds fab-side payload annotations consumed only by the
    silicon model; they are invisible to serialization, timing tables and
    feature extraction, mirroring an insertion after design hand-off.
    """

    gates: tuple[Gate, ...]
    wires: tuple[P2PWire, ...]
    paths: tuple[TimingPath, ...]
    clock_period_ps: float
    trojans: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.clock_period_ps <= 0:
            raise ValueError("clock period must be > 0")

    @property
    def registers(self) -> tuple[str, ...]:
        return tuple(g.id for g in self.gates if g.cell_kind == CellKind.DFF)


class Testability(str, Enum):
    TESTABLE = "Testable"
    POWER_CANDIDATE = "PowerCandidate"
    DISCARDED = "Discarded"


# ---------------------------------------------------------------------------
# derived indexes


class DesignIndex:
    """Precomputed arrays and lookup maps for one design.

    Build once per design and pass around; everything here is derived and
    read-only. Gate order follows design.gates; path order design.paths.
    """

    def __init__(self, design: Design):
        self.design = design
        self.gate_by_id = {g.id: g for g in design.gates}
        self.gate_idx = {g.id: i for i, g in enumerate(design.gates)}
        self.wire_by_key = {w.key: w for w in design.wires}

        # net adjacency: driver cell -> keys of its fanout wires
        self.net_sinks: dict[str, list[str]] = {}
        for w in design.wires:
            self.net_sinks.setdefault(w.driver_cell, []).append(w.key)
        for keys in self.net_sinks.values():
            keys.sort()

        n = len(design.gates)
        self.intrinsic = np.array([g.intrinsic_delay for g in design.gates])
        self.load_coeff = np.array([g.load_coeff for g in design.gates])
        self.ir_weight = np.array([g.ir_weight for g in design.gates])
        self.kind = [g.cell_kind for g in design.gates]
        self.strength = [g.drive_strength for g in design.gates]

        # per-driver load decomposition: sink pin caps and per-layer wire cap
        self.pin_load = np.zeros(n)
        self.wire_cap_layer = np.zeros((n, len(LAYERS)))
        layer_pos = {l.value: i for i, l in enumerate(LAYERS)}
        for w in design.wires:
            drv = w.driver_cell
            if drv == CLOCK_PORT:
                continue
            gi = self.gate_idx[drv]
            sink = w.sink_cell
            if sink in self.gate_by_id:
                self.pin_load[gi] += self.gate_by_id[sink].pin_cap
            for seg in w.segments:
                self.wire_cap_layer[gi, layer_pos[seg.layer]] += seg.cap_ff

        self.nominal_load = self.pin_load + self.wire_cap_layer.sum(axis=1)
        self.stage_nominal = self.intrinsic + self.load_coeff * self.nominal_load

        # flat slot arrays over all paths (lp + cp + dp gate occurrences)
        slot_gate, slot_path = [], []
        for pi, p in enumerate(design.paths):
            for gid in p.all_gates():
                slot_gate.append(self.gate_idx[gid])
                slot_path.append(pi)
        self.slot_gate = np.array(slot_gate, dtype=np.int64)
        self.slot_path = np.array(slot_path, dtype=np.int64)
        self.n_paths = len(design.paths)
        self.path_idx = {p.id: i for i, p in enumerate(design.paths)}
        self.endpoint_setup = np.array([p.endpoint_setup for p in design.paths])

        if self.n_paths:
            self.path_nominal = np.bincount(
                self.slot_path,
                weights=self.stage_nominal[self.slot_gate],
                minlength=self.n_paths,
            )
        else:
            self.path_nominal = np.zeros(0)

        # dp-wire membership: wire key -> path indices (data portion only)
        self.paths_by_dp_wire: dict[str, list[int]] = {}
        for pi, p in enumerate(design.paths):
            for wk in p.dp.wires:
                self.paths_by_dp_wire.setdefault(wk, []).append(pi)

        # net traversal: gate -> indices of paths whose any sub-path drives
        # through that gate's output net
        self.paths_by_net: dict[str, list[int]] = {}
        for pi, p in enumerate(design.paths):
            for gid in set(p.all_gates()):
                self.paths_by_net.setdefault(gid, []).append(pi)

    def fanout(self, gate_id: str) -> int:
        return len(self.net_sinks.get(gate_id, ()))

    def subpath_nominal_delay(self, sub: SubPath) -> float:
        return float(sum(self.stage_nominal[self.gate_idx[g]] for g in sub.gates))

    def path_nominal_delay(self, path: TimingPath) -> float:
        return float(self.path_nominal[self.path_idx[path.id]])


def nominal_path_delay(design: Design, path: TimingPath, index: DesignIndex | None = None) -> float:
    index = index or DesignIndex(design)
    return index.path_nominal_delay(path)


# ---------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class WirelengthDistribution:
    """Lognormal routed-length model: per-layer median scaled by `scale`."""

    scale: float = 1.0
    sigma: float = 0.7


@dataclass(frozen=True)
class DesignGenConfig:
    registers: int = 50
    combinational_gates: int = 500
    max_logic_depth: int = 10
    wirelength: WirelengthDistribution = WirelengthDistribution()
    path_cap_per_endpoint: int = 40
    slack_headroom_frac: float = 0.12


_KIND_STYLE_WEIGHTS = {
    # three synthesis styles; cones stay mostly inside one style
    0: [(CellKind.INV, 0.15), (CellKind.NAND2, 0.45), (CellKind.NOR2, 0.15),
        (CellKind.AOI, 0.08), (CellKind.BUF, 0.17)],
    1: [(CellKind.INV, 0.08), (CellKind.NAND2, 0.17), (CellKind.NOR2, 0.38),
        (CellKind.AOI, 0.27), (CellKind.BUF, 0.10)],
    2: [(CellKind.INV, 0.28), (CellKind.NAND2, 0.25), (CellKind.NOR2, 0.12),
        (CellKind.AOI, 0.15), (CellKind.BUF, 0.20)],
}

_STRENGTH_STYLE_WEIGHTS = {
    0: [(DriveStrength.X0, 0.20), (DriveStrength.X1, 0.40), (DriveStrength.X2, 0.25),
        (DriveStrength.X4, 0.10), (DriveStrength.X8, 0.05)],
    1: [(DriveStrength.X1, 0.15), (DriveStrength.X2, 0.35), (DriveStrength.X4, 0.30),
        (DriveStrength.X8, 0.15), (DriveStrength.X16, 0.05)],
    2: [(DriveStrength.X2, 0.15), (DriveStrength.X4, 0.30), (DriveStrength.X8, 0.30),
        (DriveStrength.X16, 0.15), (DriveStrength.X32, 0.10)],
}


def _weighted_choice(rng: np.random.Generator, table):
    items = [t[0] for t in table]
    w = np.array([t[1] for t in table])
    return items[int(rng.choice(len(items), p=w / w.sum()))]


def _segments_for(rng, dist_class: str, wl: WirelengthDistribution) -> tuple[WireSegment, ...]:
    """Route one wire: a primary layer plus sometimes a stub on a neighbor."""
    from .library import MetalLayer

    if dist_class == "short":
        pool = ["M1", "M2", "M3"]
    elif dist_class == "mid":
        pool = ["M2", "M3", "M4"]
    elif dist_class == "long":
        pool = ["M4", "M5", "M6"] if rng.random() > 0.04 else ["M6", "M7"]
    elif dist_class == "clock_spine":
        pool = ["M6", "M7"]
    else:  # clock_leaf
        pool = ["M2", "M3"]
    primary = pool[int(rng.integers(len(pool)))]

    def seg(layer: str, frac: float) -> WireSegment:
        ml = MetalLayer(layer)
        length = float(np.round(
            LAYER_MEDIAN_LEN[ml] * wl.scale * frac * rng.lognormal(0.0, wl.sigma), 3))
        return WireSegment(layer, max(length, 0.2),
                           LAYER_CAP_PER_UM[ml], LAYER_RES_PER_UM[ml])

    if rng.random() < 0.35:
        idx = pool.index(primary)
        other = pool[(idx + 1) % len(pool)]
        return (seg(primary, 0.7), seg(other, 0.3))
    return (seg(primary, 1.0),)


def generate_design(cfg: DesignGenConfig, seed: int) -> Design:
    """Build a synthetic layered-DAG design. Pure function of (cfg, seed)."""
    if cfg.registers < 2 or cfg.combinational_gates < 1:
        raise ConfigTooSmall(
            f"need >=2 registers and >=1 gate, got {cfg.registers}/{cfg.combinational_gates}")
    if cfg.max_logic_depth < 1:
        raise ConfigTooSmall("max_logic_depth must be >= 1")

    rng = np.random.default_rng(np.random.SeedSequence((0xDE51, seed)))
    R, G, D = cfg.registers, cfg.combinational_gates, cfg.max_logic_depth
    wl = cfg.wirelength

    n_regions = 12
    region_ir = np.round(rng.uniform(0.45, 1.9, size=n_regions), 4)

    gates: list[Gate] = []
    fanins: dict[str, tuple[str, ...]] = {}

    # registers
    reg_ids = [f"r{i:04d}" for i in range(R)]
    reg_strengths = [
        _weighted_choice(rng, [(DriveStrength.X1, 0.3), (DriveStrength.X2, 0.4),
                               (DriveStrength.X4, 0.2), (DriveStrength.X8, 0.1)])
        for _ in range(R)
    ]
    reg_setup = np.round(rng.uniform(28.0, 52.0, size=R), 1)
    reg_region = rng.integers(0, n_regions, size=R)

    # clock tree: root buffer, intermediate fan-4 levels, leaf drivers
    n_leaves = max(1, math.ceil(R / 4))
    level_sizes = [1]
    while level_sizes[-1] < n_leaves:
        level_sizes.append(min(n_leaves, level_sizes[-1] * 4))
    clock_levels: list[list[str]] = []
    cid = 0
    for size in level_sizes:
        clock_levels.append([f"c{cid + i:04d}" for i in range(size)])
        cid += size
    clock_parent: dict[str, str] = {}
    for li in range(1, len(clock_levels)):
        for j, b in enumerate(clock_levels[li]):
            clock_parent[b] = clock_levels[li - 1][j * len(clock_levels[li - 1]) // len(clock_levels[li])]
    clock_strength = {0: DriveStrength.X16, 1: DriveStrength.X16, 2: DriveStrength.X8}
    for li, level in enumerate(clock_levels):
        s = clock_strength.get(li, DriveStrength.X4)
        for b in level:
            region = int(rng.integers(0, n_regions))
            gates.append(Gate(b, CellKind.BUF, s,
                              intrinsic_delay(CellKind.BUF, s),
                              load_coeff(CellKind.BUF, s),
                              pin_cap(CellKind.BUF, s),
                              region=region,
                              ir_weight=float(region_ir[region])))

    dff_leaf = {reg_ids[j]: clock_levels[-1][j % n_leaves] for j in range(R)}

    for j, rid in enumerate(reg_ids):
        s = reg_strengths[j]
        gates.append(Gate(rid, CellKind.DFF, s,
                          intrinsic_delay(CellKind.DFF, s),
                          load_coeff(CellKind.DFF, s),
                          pin_cap(CellKind.DFF, s),
                          region=int(reg_region[j]),
                          ir_weight=float(region_ir[int(reg_region[j])]),
                          setup_ps=float(reg_setup[j])))

    # combinational gates, layered, style-clustered
    comb_ids = [f"g{i:04d}" for i in range(G)]
    level_of: dict[str, int] = {}
    style_of: dict[str, int] = {}
    by_level: dict[int, list[str]] = {l: [] for l in range(1, D + 1)}
    for i, gid in enumerate(comb_ids):
        lvl = 1 + (i * D) // G
        level_of[gid] = lvl
        style_of[gid] = (3 * i) // G
        by_level[lvl].append(gid)

    for gid in comb_ids:
        style = style_of[gid]
        kind = _weighted_choice(rng, _KIND_STYLE_WEIGHTS[style])
        strength = _weighted_choice(rng, _STRENGTH_STYLE_WEIGHTS[style])
        lvl = level_of[gid]
        region = (style * 4 + min(3, (lvl - 1) * 4 // max(1, D))) % n_regions
        gates.append(Gate(gid, kind, strength,
                          intrinsic_delay(kind, strength),
                          load_coeff(kind, strength),
                          pin_cap(kind, strength),
                          region=region,
                          ir_weight=float(region_ir[region])))

    gate_by_id = {g.id: g for g in gates}

    # wire up fan-ins; level-1 gates read registers, deeper gates prefer
    # recent levels and their own style cluster
    unused_regs = list(reg_ids)
    for gid in comb_ids:
        lvl = level_of[gid]
        arity = KIND_ARITY[gate_by_id[gid].cell_kind]
        pool: list[str] = []
        for back in range(1, 4):
            if lvl - back >= 1:
                pool.extend(by_level[lvl - back])
        if lvl <= 1 or not pool:
            pool = pool + reg_ids
        same_style = [p for p in pool if style_of.get(p, -1) == style_of[gid]]
        chosen: list[str] = []
        while len(chosen) < arity:
            if unused_regs and lvl <= 2 and rng.random() < 0.5:
                cand = unused_regs[0]
            elif same_style and rng.random() < 0.8:
                cand = same_style[int(rng.integers(len(same_style)))]
            else:
                cand = pool[int(rng.integers(len(pool)))]
            if cand not in chosen and cand != gid:
                chosen.append(cand)
                if cand in unused_regs:
                    unused_regs.remove(cand)
        fanins[gid] = tuple(chosen)

    # register data inputs: spread source depths so path delays span a wide
    # slack range; prefer gates not already feeding a register
    order = rng.permutation(R)
    d_source: dict[str, str] = {}
    used_sources: set[str] = set()
    for rank, j in enumerate(order):
        rid = reg_ids[int(j)]
        lvl = 1 + (rank * D) // R
        lvl = int(np.clip(lvl + rng.integers(-1, 2), 1, D))
        candidates = by_level[lvl] or comb_ids
        fresh = [c for c in candidates if c not in used_sources]
        src = (fresh or candidates)[int(rng.integers(len(fresh or candidates)))]
        d_source[rid] = src
        used_sources.add(src)
        fanins[rid] = (src,)

    # fanout map before upsizing (for the sizing pass)
    fanout_count: dict[str, int] = {}
    for gid, srcs in fanins.items():
        for s in srcs:
            fanout_count[s] = fanout_count.get(s, 0) + 1

    # upsize heavily loaded drivers by one or two strength classes
    sized = []
    for g in gates:
        fo = fanout_count.get(g.id, 0)
        if g.cell_kind not in (CellKind.DFF, CellKind.BUF) and fo >= 4:
            pos = STRENGTHS.index(g.drive_strength)
            pos = min(len(STRENGTHS) - 1, pos + (2 if fo >= 7 else 1))
            s = STRENGTHS[pos]
            g = replace(g, drive_strength=s,
                        intrinsic_delay=intrinsic_delay(g.cell_kind, s),
                        load_coeff=load_coeff(g.cell_kind, s),
                        pin_cap=pin_cap(g.cell_kind, s))
        sized.append(g)
    gates = sized
    gate_by_id = {g.id: g for g in gates}

    # wires
    wires: list[P2PWire] = []

    def add_wire(driver: str, sink_pin: str, dist_class: str):
        drv_pin = driver if driver == CLOCK_PORT else f"{driver}.Y"
        wires.append(P2PWire(drv_pin, sink_pin, _segments_for(rng, dist_class, wl)))

    add_wire(CLOCK_PORT, f"{clock_levels[0][0]}.A", "clock_spine")
    for li in range(1, len(clock_levels)):
        for b in clock_levels[li]:
            add_wire(clock_parent[b], f"{b}.A",
                     "clock_spine" if li < len(clock_levels) - 1 else "mid")
    for rid in reg_ids:
        add_wire(dff_leaf[rid], f"{rid}.CK", "clock_leaf")

    def dist_class_for(src: str, dst: str) -> str:
        l_src = level_of.get(src, 0)
        l_dst = level_of.get(dst, D + 1)
        gap = abs(l_dst - l_src)
        if gap <= 1:
            return "short"
        if gap <= 3:
            return "mid"
        return "long"

    for gid in comb_ids:
        for slot, src in enumerate(fanins[gid]):
            add_wire(src, f"{gid}.A{slot}", dist_class_for(src, gid))
    for rid in reg_ids:
        add_wire(d_source[rid], f"{rid}.D", dist_class_for(d_source[rid], rid))

    # stage delays for path search (same formula DesignIndex uses)
    pin_load: dict[str, float] = {g.id: 0.0 for g in gates}
    wire_load: dict[str, float] = {g.id: 0.0 for g in gates}
    for w in wires:
        if w.driver_cell == CLOCK_PORT:
            continue
        if w.sink_cell in gate_by_id:
            pin_load[w.driver_cell] += gate_by_id[w.sink_cell].pin_cap
        wire_load[w.driver_cell] += w.cap_ff
    stage = {g.id: g.intrinsic_delay + g.load_coeff * (pin_load[g.id] + wire_load[g.id])
             for g in gates}

    # clock chains per register (root..leaf buffer ids)
    def clock_chain(rid: str) -> list[str]:
        chain = [dff_leaf[rid]]
        while chain[0] in clock_parent:
            chain.insert(0, clock_parent[chain[0]])
        return chain

    # k-longest data walks into each endpoint (exact best-first search)
    best_back: dict[str, float] = {}

    def best(gid: str) -> float:
        if gid in best_back:
            return best_back[gid]
        stack = [gid]
        while stack:
            top = stack[-1]
            if top in best_back:
                stack.pop()
                continue
            if top in reg_ids or gate_by_id[top].cell_kind == CellKind.DFF:
                best_back[top] = stage[top]
                stack.pop()
                continue
            pending = [f for f in fanins[top] if f not in best_back]
            if pending:
                stack.extend(pending)
            else:
                best_back[top] = stage[top] + max(best_back[f] for f in fanins[top])
                stack.pop()
        return best_back[gid]

    def enumerate_dp_walks(rid: str, cap: int) -> list[tuple[str, ...]]:
        src = d_source[rid]
        out: list[tuple[str, ...]] = []
        heap: list[tuple[float, tuple[str, ...], float]] = []
        heapq.heappush(heap, (-best(src), (src,), stage[src]))
        while heap and len(out) < cap:
            neg_bound, walk, partial = heapq.heappop(heap)
            head = walk[0]
            if head in reg_ids:
                out.append(walk)
                continue
            for f in fanins[head]:
                heapq.heappush(heap, (-(partial + best(f)), (f,) + walk, partial + stage[f]))
        return out

    wire_key: dict[tuple[str, str], str] = {}
    for w in wires:
        wire_key[(w.driver_cell, w.sink_cell)] = w.key

    paths: list[TimingPath] = []
    pid = 0
    for rid in reg_ids:
        cp_gates = tuple(clock_chain(rid))
        cp_wires = tuple(
            [wire_key[(cp_gates[i], cp_gates[i + 1])] for i in range(len(cp_gates) - 1)]
            + [wire_key[(cp_gates[-1], rid)]])
        cp = SubPath(SubPathKind.CAPTURE_CLOCK, cp_gates, cp_wires)
        for walk in enumerate_dp_walks(rid, cfg.path_cap_per_endpoint):
            launch = walk[0]
            lp_gates = tuple(clock_chain(launch))
            lp_wires = tuple(
                [wire_key[(lp_gates[i], lp_gates[i + 1])] for i in range(len(lp_gates) - 1)]
                + [wire_key[(lp_gates[-1], launch)]])
            dp_wires = tuple(
                [wire_key[(walk[i], walk[i + 1])] for i in range(len(walk) - 1)]
                + [wire_key[(walk[-1], rid)]])
            paths.append(TimingPath(
                id=f"p{pid:06d}",
                lp=SubPath(SubPathKind.LAUNCH_CLOCK, lp_gates, lp_wires),
                cp=cp,
                dp=SubPath(SubPathKind.DATA, walk, dp_wires),
                endpoint_setup=float(gate_by_id[rid].setup_ps),
                endpoint_register=rid,
            ))
            pid += 1

    worst = max(sum(stage[g] for g in p.all_gates()) + p.endpoint_setup for p in paths)
    period = round(worst * (1.0 + cfg.slack_headroom_frac), 2)

    return Design(gates=tuple(gates), wires=tuple(wires), paths=tuple(paths),
                  clock_period_ps=period)


# ---------------------------------------------------------------------------
# operations


def enumerate_p2p_wires(design: Design) -> list[P2PWire]:
    """All pin-to-pin wires, one per (driver pin, sink pin) pair."""
    return sorted(design.wires, key=lambda w: w.key)


def select_paths_for_wire(design: Design, wire: P2PWire, n: int,
                          index: DesignIndex | None = None) -> list[TimingPath]:
    """Up to n enumerated paths whose data portion traverses `wire`.

    Prefers the largest nominal data-portion delay; ties break on path id.
    Raises NoPathThroughWire for wires off every data path (clock tree,
    unreached logic).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    index = index or DesignIndex(design)
    hits = index.paths_by_dp_wire.get(wire.key, [])
    if not hits:
        raise NoPathThroughWire(f"wire {wire.key} lies on no register-to-register path")
    scored = sorted(
        ((-index.subpath_nominal_delay(design.paths[pi].dp), design.paths[pi].id, pi)
         for pi in hits))
    return [design.paths[pi] for _, _, pi in scored[:n]]


def classify_testability(design: Design, path: TimingPath, tester_min_delay_ps: float,
                         atpg_fail_prob: float, rng: np.random.Generator,
                         index: DesignIndex | None = None) -> Testability:
    """Triage one candidate path for clock-sweep testing.

    Paths faster than the tester's reachable sweep window go to the
    power-analysis candidate list; otherwise an ATPG attempt is modeled as
    a Bernoulli draw with the given failure probability.
    """
    if tester_min_delay_ps < 0:
        raise ValueError("tester_min_delay_ps must be >= 0")
    if not 0.0 <= atpg_fail_prob <= 1.0:
        raise ValueError("atpg_fail_prob must be in [0, 1]")
    index = index or DesignIndex(design)
    measurable = index.path_nominal_delay(path) + path.endpoint_setup
    if measurable < tester_min_delay_ps:
        return Testability.POWER_CANDIDATE
    if rng.random() < atpg_fail_prob:
        return Testability.DISCARDED
    return Testability.TESTABLE


# ---------------------------------------------------------------------------
# serialization


def _subpath_to_json(sub: SubPath) -> dict:
    return {"kind": sub.kind.value, "gates": list(sub.gates), "wires": list(sub.wires)}


def design_to_json(design: Design) -> dict:
    """Design-time view of the netlist. Trojan annotations never appear."""
    return {
        "schema_version": SCHEMA_VERSION,
        "clock_period_ps": design.clock_period_ps,
        "gates": [
            {
                "id": g.id,
                "cell_kind": g.cell_kind.value,
                "drive_strength": g.drive_strength.value,
                "intrinsic_delay_ps": g.intrinsic_delay,
                "load_coeff_ps_per_ff": g.load_coeff,
                "pin_cap_ff": g.pin_cap,
                "region": g.region,
                "ir_weight": g.ir_weight,
                "setup_ps": g.setup_ps,
            }
            for g in design.gates
        ],
        "wires": [
            {
                "driver_pin": w.driver_pin,
                "sink_pin": w.sink_pin,
                "segments": [
                    {"layer": s.layer, "length_um": s.length_um,
                     "cap_per_um": s.cap_per_um, "res_per_um": s.res_per_um}
                    for s in w.segments
                ],
            }
            for w in design.wires
        ],
        "paths": [
            {
                "id": p.id,
                "endpoint_register": p.endpoint_register,
                "endpoint_setup_ps": p.endpoint_setup,
                "lp": _subpath_to_json(p.lp),
                "cp": _subpath_to_json(p.cp),
                "dp": _subpath_to_json(p.dp),
            }
            for p in design.paths
        ],
    }


def design_from_json(doc: dict) -> Design:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported design schema {doc.get('schema_version')!r}")

    gates = tuple(
        Gate(d["id"], CellKind(d["cell_kind"]), DriveStrength(d["drive_strength"]),
             d["intrinsic_delay_ps"], d["load_coeff_ps_per_ff"], d["pin_cap_ff"],
             region=d["region"], ir_weight=d["ir_weight"], setup_ps=d["setup_ps"])
        for d in doc["gates"])
    wires = tuple(
        P2PWire(d["driver_pin"], d["sink_pin"],
                tuple(WireSegment(s["layer"], s["length_um"],
                                  s["cap_per_um"], s["res_per_um"])
                      for s in d["segments"]))
        for d in doc["wires"])

    def sub(d: dict) -> SubPath:
        return SubPath(SubPathKind(d["kind"]), tuple(d["gates"]), tuple(d["wires"]))

    paths = tuple(
        TimingPath(d["id"], sub(d["lp"]), sub(d["cp"]), sub(d["dp"]),
                   d["endpoint_setup_ps"], d["endpoint_register"])
        for d in doc["paths"])
    return Design(gates, wires, paths, doc["clock_period_ps"])


def dump_design(design: Design) -> str:
    return json.dumps(design_to_json(design), sort_keys=True, indent=1)
