"""Design-time golden timing model: nominal delays plus margin models.

Two margin styles are supported. The global-pessimistic baseline evaluates
every gate at a derated rail voltage and charges a fixed endpoint
uncertainty. The path-specific style evaluates each gate at the mean of its
own local supply-drop distribution and charges a per-path uncertainty equal
to a multiple of that path's analytically propagated voltage-noise delay
spread, so margins shrink to what each path actually needs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .errors import EmptyInput
from .netlist import Design, DesignIndex, TimingPath
from .silicon import VoltageNoiseModel


@dataclass(frozen=True)
class GlobalPessimistic:
    """Worst-case rail voltage for all gates plus a flat endpoint guard."""

    rail_voltage: float
    endpoint_uncertainty_ps: float = 25.0
    v_nom: float = 0.9
    alpha: float = 1.3

    def __post_init__(self):
        if not 0 < self.rail_voltage < self.v_nom:
            raise ValueError("rail_voltage must sit below v_nom")
        if self.endpoint_uncertainty_ps < 0:
            raise ValueError("endpoint_uncertainty_ps must be >= 0")

    @property
    def mode_name(self) -> str:
        return "GlobalPessimistic"


@dataclass(frozen=True)
class PathSpecific:
    """Per-gate mean supply drop plus sigma_mult times the path's own
    voltage-noise delay spread as uncertainty."""

    voltage: VoltageNoiseModel
    sigma_mult: float = 3.0

    def __post_init__(self):
        if self.sigma_mult < 0:
            raise ValueError("sigma_mult must be >= 0")

    @property
    def mode_name(self) -> str:
        return "PathSpecific"


MarginMode = GlobalPessimistic | PathSpecific


@dataclass(frozen=True)
class GtmRecord:
    path_id: str
    sta_delay: float       # nominal, un-margined (ps)
    slack: float           # ps
    margin_applied: float  # ps
    mode: str


_factor_moment_cache: dict[tuple, tuple[float, float]] = {}


def voltage_factor_moments(model: VoltageNoiseModel, ir_weight: float) -> tuple[float, float]:
    """Mean and sd of the delay factor (1 - drop) ** -alpha for one gate.

    The drop fraction follows the gate's truncated normal; moments come
    from deterministic quadrature so the timing tables carry no sampling
    noise.
    """
    mu = model.mu_drop_frac * ir_weight
    key = (round(mu, 12), model.sigma_drop_frac, model.max_drop_frac, model.alpha)
    if key in _factor_moment_cache:
        return _factor_moment_cache[key]

    sigma, hi, alpha = model.sigma_drop_frac, model.max_drop_frac, model.alpha
    if sigma == 0:
        x = min(max(mu, 0.0), hi)
        out = ((1.0 - x) ** -alpha, 0.0)
    else:
        lo_z, hi_z = (0.0 - mu) / sigma, (hi - mu) / sigma
        norm = ndtr(hi_z) - ndtr(lo_z)

        def pdf(x):
            z = (x - mu) / sigma
            return np.exp(-0.5 * z * z) / (sigma * np.sqrt(2 * np.pi) * norm)

        m1 = quad(lambda x: (1 - x) ** -alpha * pdf(x), 0.0, hi, limit=200)[0]
        m2 = quad(lambda x: (1 - x) ** (-2 * alpha) * pdf(x), 0.0, hi, limit=200)[0]
        out = (m1, float(np.sqrt(max(m2 - m1 * m1, 0.0))))
    _factor_moment_cache[key] = out
    return out


def _gate_voltage_stats(index: DesignIndex, model: VoltageNoiseModel):
    """(mean factor, sd factor) arrays over all gates."""
    means = np.empty(len(index.design.gates))
    sds = np.empty(len(index.design.gates))
    for i, w in enumerate(index.ir_weight):
        means[i], sds[i] = voltage_factor_moments(model, float(w))
    return means, sds


def gtm_slack(design: Design, path: TimingPath, mode: MarginMode,
              index: DesignIndex | None = None) -> GtmRecord:
    """Slack of one path under the chosen margin model.

    slack = T - sta_delay - endpoint_setup - margin_applied, exactly.
    """
    index = index or DesignIndex(design)
    table = gtm_table(design, mode, index, paths=[path])
    return table[path.id]


def gtm_table(design: Design, mode: MarginMode,
              index: DesignIndex | None = None, paths=None) -> dict[str, GtmRecord]:
    """Margin-aware slack records for every path (vectorized)."""
    index = index or DesignIndex(design)
    paths = list(paths) if paths is not None else list(design.paths)
    T = design.clock_period_ps

    records: dict[str, GtmRecord] = {}
    if isinstance(mode, GlobalPessimistic):
        rail_factor = (mode.v_nom / mode.rail_voltage) ** mode.alpha
        for p in paths:
            gidx = [index.gate_idx[g] for g in p.all_gates()]
            transistor = float(np.sum(index.intrinsic[gidx])) if gidx else 0.0
            sta_delay = float(np.sum(index.stage_nominal[gidx])) if gidx else 0.0
            margin = transistor * (rail_factor - 1.0) + mode.endpoint_uncertainty_ps
            slack = T - sta_delay - p.endpoint_setup - margin
            records[p.id] = GtmRecord(p.id, sta_delay, slack, margin, mode.mode_name)
    else:
        fmean, fsd = _gate_voltage_stats(index, mode.voltage)
        for p in paths:
            gidx = [index.gate_idx[g] for g in p.all_gates()]
            if gidx:
                a = index.intrinsic[gidx]
                sta_delay = float(np.sum(index.stage_nominal[gidx]))
                mean_push = float(np.sum(a * (fmean[gidx] - 1.0)))
                spread = float(np.sqrt(np.sum((a * fsd[gidx]) ** 2)))
            else:
                sta_delay, mean_push, spread = 0.0, 0.0, 0.0
            margin = mean_push + mode.sigma_mult * spread
            slack = T - sta_delay - p.endpoint_setup - margin
            records[p.id] = GtmRecord(p.id, sta_delay, slack, margin, mode.mode_name)
    return records


def static_shift(pairs) -> float:
    """Mean observed shift: average of (measured - gtm) slack over pairs."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("static shift needs at least one (gtm, measured) pair")
    return float(np.mean([m - g for g, m in pairs]))


# --- CSV interface: path_id,sta_delay_ps,slack_ps,margin_ps,mode ---

GTM_HEADER = ["path_id", "sta_delay_ps", "slack_ps", "margin_ps", "mode"]


def gtm_to_csv(records: dict[str, GtmRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GTM_HEADER)
    for pid in sorted(records):
        r = records[pid]
        w.writerow([r.path_id, repr(r.sta_delay), repr(r.slack),
                    repr(r.margin_applied), r.mode])
    return buf.getvalue()


def gtm_from_csv(text: str) -> dict[str, GtmRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != GTM_HEADER:
        raise ValueError("unrecognized gtm table header")
    return {
        r[0]: GtmRecord(r[0], float(r[1]), float(r[2]), float(r[3]), r[4])
        for r in rows[1:]
    }
