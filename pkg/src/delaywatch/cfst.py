"""Clock-frequency-sweeping test: quantized start-to-fail measurement,
cross-die slack averaging and speed binning.

The sweep grid is anchored at the nominal period T and descends in steps of
S, so a measured slack is always a nonnegative multiple of S and the
measured delay overshoots the true delay by less than one step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBin, PathFailsAtNominal
from .netlist import DesignIndex
from .silicon import FabLot, LotSimulator


@dataclass(frozen=True)
class CfstConfig:
    step_ps: float
    period_ps: float
    trials_per_die: int = 1

    def __post_init__(self):
        if not 0 < self.step_ps <= self.period_ps:
            raise ValueError("need 0 < step <= period")
        if self.trials_per_die < 1:
            raise ValueError("trials_per_die must be >= 1")


@dataclass(frozen=True)
class Measurement:
    die_id: str
    path_id: str
    measured_delay_ps: float
    measured_slack_ps: float


def start_to_fail_measure(true_delay: float, cfg: CfstConfig,
                          die_id: str = "", path_id: str = "") -> Measurement:
    """Sweep the clock down from T until the path fails; report the first
    passing grid period as the measured delay.

    measured = T - S * floor((T - true) / S), conservatively rounded so
    0 <= measured - true < S holds exactly.
    """
    if true_delay <= 0:
        raise ValueError("true_delay must be > 0")
    T, S = cfg.period_ps, cfg.step_ps
    if true_delay > T:
        raise PathFailsAtNominal(
            f"delay {true_delay:.2f} ps exceeds the nominal period {T:.2f} ps")
    k = math.floor((T - true_delay) / S)
    if T - S * (k + 1) >= true_delay:  # float division rounded the count down
        k += 1
    if T - S * k < true_delay:  # ... or up
        k -= 1
    slack = S * float(k)
    return Measurement(die_id, path_id, T - slack, slack)


def quantize_delays(true_delays: np.ndarray, cfg: CfstConfig):
    """Vectorized start-to-fail grid: (measured, slack, fails_at_nominal).

    Entries failing at the nominal period come back NaN with the fail flag
    set instead of raising; callers decide how to report them.
    """
    t = np.asarray(true_delays, dtype=float)
    T, S = cfg.period_ps, cfg.step_ps
    fail = t > T
    k = np.floor((T - t) / S)
    k = np.where(T - S * (k + 1) >= t, k + 1, k)
    k = np.where(T - S * k < t, k - 1, k)
    slack = S * k
    measured = T - slack
    measured = np.where(fail, np.nan, measured)
    slack = np.where(fail, np.nan, slack)
    return measured, slack, fail


def mean_slack(measurements) -> float:
    """Arithmetic mean of measured slack across a bin's dies."""
    ms = list(measurements)
    if not ms:
        raise EmptyBin("mean slack over an empty measurement set")
    return float(np.mean([m.measured_slack_ps for m in ms]))


@dataclass(frozen=True)
class SpeedBin:
    label: str
    die_ids: tuple[str, ...]
    probe_stat_ps: dict  # die_id -> mean measured probe delay


def bin_labels(b: int) -> list[str]:
    if b == 1:
        return ["All"]
    if b == 3:
        return ["Fast", "Typical", "Slow"]
    return [f"bin{i:02d}" for i in range(b)]


def speed_bin(lot: FabLot, probe_paths, cfg: CfstConfig, b: int = 3,
              index: DesignIndex | None = None,
              simulator: LotSimulator | None = None,
              probe_measured: np.ndarray | None = None) -> list[SpeedBin]:
    """Partition the lot's dies into b quantile groups by probe speed.

    The probe statistic is each die's mean measured (grid-quantized) delay
    over the probe paths; a probe failing at nominal counts as one step past
    T. Bins are labeled fastest to slowest and partition the lot.
    """
    if b < 1:
        raise ValueError("b must be >= 1")
    probe_paths = list(probe_paths)
    if not probe_paths:
        raise ValueError("probe_paths must be nonempty")
    index = index or DesignIndex(lot.design)

    if probe_measured is None:
        simulator = simulator or LotSimulator(lot, index)
        rows = [index.path_idx[p.id] for p in probe_paths]
        setup = index.endpoint_setup[rows][:, None]
        true = simulator.lot_true_delays(trial=0)[rows, :] + setup
        probe_measured, _, fail = quantize_delays(true, cfg)
        probe_measured = np.where(fail, cfg.period_ps + cfg.step_ps, probe_measured)

    stats = probe_measured.mean(axis=0)
    order = np.argsort(stats, kind="stable")
    chunks = np.array_split(order, b)
    labels = bin_labels(b)
    bins = []
    for label, chunk in zip(labels, chunks):
        die_ids = tuple(lot.dies[int(i)].die_id for i in chunk)
        bins.append(SpeedBin(
            label=label,
            die_ids=die_ids,
            probe_stat_ps={lot.dies[int(i)].die_id: float(stats[int(i)]) for i in chunk},
        ))
    return bins
