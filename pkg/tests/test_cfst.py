import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from delaywatch.cfst import (
    CfstConfig,
    Measurement,
    bin_labels,
    mean_slack,
    quantize_delays,
    speed_bin,
    start_to_fail_measure,
)
from delaywatch.errors import EmptyBin, PathFailsAtNominal
from delaywatch.silicon import ProcessSkew, make_lot


def test_hand_evaluated_grid():
    m = start_to_fail_measure(700.0, CfstConfig(step_ps=15.0, period_ps=714.28))
    assert m.measured_delay_ps == pytest.approx(714.28, abs=1e-9)
    assert m.measured_delay_ps - 700.0 == pytest.approx(14.28, abs=1e-9)
    assert 0 <= m.measured_delay_ps - 700.0 < 15.0


def test_exact_grid_point():
    # grid values chosen exactly representable: 720 - 4*15 = 660
    m = start_to_fail_measure(660.0, CfstConfig(step_ps=15.0, period_ps=720.0))
    assert m.measured_delay_ps == 660.0
    assert m.measured_slack_ps == 60.0


def test_fails_at_nominal():
    with pytest.raises(PathFailsAtNominal):
        start_to_fail_measure(800.0, CfstConfig(step_ps=15.0, period_ps=714.28))


@settings(max_examples=300, deadline=None)
@given(true=st.floats(0.5, 1199.0), step=st.floats(1.0, 50.0),
       extra=st.floats(0.0, 500.0))
def test_quantization_bound_property(true, step, extra):
    period = true + extra
    assume(step <= period)
    m = start_to_fail_measure(true, CfstConfig(step_ps=step, period_ps=period))
    err = m.measured_delay_ps - true
    # the exact-real error is in [0, step); the reported subtraction may
    # round up to step itself when the inputs straddle a grid ulp
    assert 0.0 <= err < step + 1e-9 * max(1.0, step)
    k = m.measured_slack_ps / step
    assert abs(k - round(k)) < 1e-9
    # conservative: measured slack never exceeds true slack (one ulp again)
    assert m.measured_slack_ps <= (period - true) + 1e-9 * max(1.0, period)


def test_vectorized_matches_scalar():
    cfg = CfstConfig(step_ps=15.0, period_ps=714.28)
    rng = np.random.default_rng(11)
    true = rng.uniform(10, 714.28, size=500)
    measured, slack, fail = quantize_delays(true, cfg)
    assert not fail.any()
    for i in range(0, 500, 37):
        m = start_to_fail_measure(float(true[i]), cfg)
        assert measured[i] == m.measured_delay_ps
        assert slack[i] == m.measured_slack_ps
    _, _, fails = quantize_delays(np.array([800.0, 100.0]), cfg)
    assert fails.tolist() == [True, False]


def test_mean_slack():
    ms = [Measurement("d", "p", 700.0, 14.0)] * 5
    assert mean_slack(ms) == 14.0
    with pytest.raises(EmptyBin):
        mean_slack([])


def _measure_mean_slack(design, index, seed, n_dies, path_row, cfg):
    lot = make_lot(design, ProcessSkew(0, 0), n_dies, [], seed=seed,
                   persistent_offsets=(0.0,))
    from delaywatch.silicon import LotSimulator
    sim = LotSimulator(lot, index)
    true = sim.lot_true_delays()[path_row, :] + index.endpoint_setup[path_row]
    _, slack, fail = quantize_delays(true, cfg)
    assert not fail.any()
    return slack


@pytest.mark.parametrize("m", [25, 100])
def test_sqrt_m_averaging_law(small_design, small_index, m):
    # repeated-lot Monte Carlo: the sd of the cross-die mean shrinks like
    # sqrt(m) relative to the pooled per-die sd
    cfg = CfstConfig(step_ps=15.0, period_ps=small_design.clock_period_ps)
    row = int(np.argmax(small_index.path_nominal))
    lots = 240
    slacks = np.stack([
        _measure_mean_slack(small_design, small_index, 1000 + k, m, row, cfg)
        for k in range(lots)
    ])
    sigma_sample = slacks.std(ddof=1)
    sd_of_mean = slacks.mean(axis=1).std(ddof=1)
    ratio = sd_of_mean / (sigma_sample / np.sqrt(m))
    assert 0.8 <= ratio <= 1.2


def test_speed_bin_single_bin(small_design, small_index):
    lot = make_lot(small_design, ProcessSkew(0, 0), 9, [], seed=3)
    cfg = CfstConfig(step_ps=15.0, period_ps=small_design.clock_period_ps)
    bins = speed_bin(lot, list(small_design.paths[:6]), cfg, b=1, index=small_index)
    assert len(bins) == 1 and bins[0].label == "All"
    assert len(bins[0].die_ids) == 9


def test_speed_bin_recovers_separated_derivatives(small_design, small_index):
    # well-separated persistent multipliers: quantile binning should sort the
    # dies into their fabrication derivatives almost perfectly
    lot = make_lot(small_design, ProcessSkew(0, 0), 60, [], seed=13,
                   persistent_offsets=(-0.10, 0.0, 0.10))
    cfg = CfstConfig(step_ps=15.0, period_ps=small_design.clock_period_ps * 1.2)
    probe = list(small_design.paths[::4])[:16]
    bins = speed_bin(lot, probe, cfg, b=3, index=small_index)
    mult = {d.die_id: d.persistent_mult for d in lot.dies}
    expected = {"Fast": 0.90, "Typical": 1.0, "Slow": 1.10}
    total = sum(len(b.die_ids) for b in bins)
    pure = sum(sum(1 for d in b.die_ids if mult[d] == expected[b.label]) for b in bins)
    assert total == 60
    assert pure / total >= 0.95
    # partition: every die in exactly one bin
    all_ids = [d for b in bins for d in b.die_ids]
    assert sorted(all_ids) == sorted(mult)


def test_speed_bin_deterministic(small_design, small_index):
    lot = make_lot(small_design, ProcessSkew(5, 5), 30, [], seed=17)
    cfg = CfstConfig(step_ps=15.0, period_ps=small_design.clock_period_ps)
    probe = list(small_design.paths[:8])
    a = speed_bin(lot, probe, cfg, b=3, index=small_index)
    b = speed_bin(lot, probe, cfg, b=3, index=small_index)
    assert [x.die_ids for x in a] == [x.die_ids for x in b]
    assert bin_labels(3) == ["Fast", "Typical", "Slow"]
