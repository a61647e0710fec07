import json
import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import minute_series
from ddstop.backtest import (
    BacktestConfig,
    FixedStop,
    Mode,
    calibrate_as_of,
    calibration_corpus,
    run_backtest,
    run_r_method_calibrated,
    run_t_method_calibrated,
)
from ddstop.errors import InsufficientHistory, InvalidParameter
from ddstop.market_data import PlantedSpec, generate_gbm, generate_planted, to_hourly_grid
from ddstop.rolling import RollingParams
from ddstop.signals import compute_sma, run_signal_only, simulate
from oracles import brute_force_threshold, minutes_of, reference_artificial, reference_backtest, sqrt_bins
from replay import check_stop_tightness, gap_through_ok

CFG = BacktestConfig(min_corpus=10)


@pytest.fixture(scope="module")
def volatile():
    return generate_gbm(42, p0=100.0, mu=0.0, sigma=0.6, n_minutes=60 * 390)


def same_trades(a, b):
    return [(t.entry_time, t.exit_time, t.entry_price, t.exit_price) for t in a] == [
        (t.entry_time, t.exit_time, t.entry_price, t.exit_price) for t in b
    ]


def test_config_validation():
    with pytest.raises(InvalidParameter):
        BacktestConfig(initial_cash=0)
    with pytest.raises(InvalidParameter):
        BacktestConfig(min_corpus=0)
    with pytest.raises(InvalidParameter):
        BacktestConfig(n_policy="fixed")
    assert BacktestConfig(mode="tmethod").mode is Mode.T_METHOD
    assert BacktestConfig(n_policy="fixed", n_bins=7).bin_count(1000) == 7
    assert BacktestConfig().bin_count(250) == 16


def test_stop_arithmetic():
    hours = np.repeat([99.0] * 20, 60)
    path = np.concatenate([hours, [100.0], np.linspace(101, 110, 10), [109, 108, 107, 106, 105, 104.6, 104.0, 103.0]])
    s = minute_series(path, start="2016-01-04T00:00")
    grid = to_hourly_grid(s)
    trades, _ = simulate(s, grid, compute_sma(grid), FixedStop(0.05))
    stop = trades[0]
    assert stop.exit_reason == "stop"
    assert stop.exit_price == 104.0
    assert stop.entry_price == 100.0
    assert 104.0 <= 0.95 * 110 < 104.6


def test_loose_stop_never_binds(volatile):
    base = run_backtest(volatile, replace(CFG, mode=Mode.SIGNAL_ONLY))
    max_dd = max(t.max_drawdown for t in base.trades)
    for mode in (Mode.T_METHOD, Mode.R_METHOD):
        res = run_backtest(volatile, replace(CFG, mode=mode, threshold_override=max_dd * 1.01))
        assert res.thresholds_used
        assert same_trades(res.trades, base.trades)
        assert res.final_nlv == pytest.approx(base.final_nlv, rel=1e-9)


def test_final_nlv_identity(volatile):
    for mode in Mode:
        res = run_backtest(volatile, replace(CFG, mode=mode))
        product = math.prod(1 + t.trade_return for t in res.trades)
        assert res.final_nlv == res.curve.final
        assert res.final_nlv == pytest.approx(CFG.initial_cash * product, rel=1e-9)


def _t_reference_thresholds(series, config):
    shadow = reference_backtest(series.times, series.prices, config.sma_period)
    shadow = [t for t in shadow if t.exit_reason != "forced"]

    def threshold_at(h):
        corpus = [t for t in shadow if t.exit_time < h]
        if len(corpus) < config.min_corpus:
            return None
        d = [t.max_drawdown for t in corpus]
        if max(d) == 0:
            return None
        return brute_force_threshold(d, [t.trade_return for t in corpus], sqrt_bins(len(corpus)))[1]

    return threshold_at


def _assert_matches_reference(ours, ref):
    assert len(ours) == len(ref)
    for a, b in zip(ours, ref):
        assert minutes_of([a.entry_time, a.exit_time]) == [b.entry_time, b.exit_time]
        assert (a.entry_price, a.exit_price, a.exit_reason) == (b.entry_price, b.exit_price, b.exit_reason)
        assert a.threshold == b.threshold


def test_t_method_matches_reference_simulator(gbm60):
    res = run_t_method_calibrated(gbm60, CFG)
    ref = reference_backtest(gbm60.times, gbm60.prices, 20, _t_reference_thresholds(gbm60, CFG))
    assert res.thresholds_used
    _assert_matches_reference(res.trades, ref)


def test_t_method_matches_reference_with_stops(volatile):
    res = run_t_method_calibrated(volatile, CFG)
    ref = reference_backtest(volatile.times, volatile.prices, 20, _t_reference_thresholds(volatile, CFG))
    assert res.stop_exits > 0
    _assert_matches_reference(res.trades, ref)


def test_r_method_matches_reference_simulator(volatile):
    config = replace(CFG, rolling=RollingParams(l=20, m=120))
    art = reference_artificial(volatile.times, volatile.prices, 20, 20)

    def threshold_at(h):
        corpus = [a for a in art if a[1] < h][-120:]
        if len(corpus) < config.min_corpus:
            return None
        d = [a[4] for a in corpus]
        if max(d) == 0:
            return None
        r = [a[3] / a[2] - 1 for a in corpus]
        return brute_force_threshold(d, r, sqrt_bins(len(corpus)))[1]

    res = run_r_method_calibrated(volatile, config)
    ref = reference_backtest(volatile.times, volatile.prices, 20, threshold_at)
    assert res.stop_exits > 0
    _assert_matches_reference(res.trades, ref)


def test_frozen_schedule_uses_one_threshold(volatile):
    res = run_t_method_calibrated(volatile, replace(CFG, recalibrate_every=10**6))
    assert len(res.thresholds_used) == 1
    thr = res.thresholds_used[0][1]
    first = res.thresholds_used[0][0]
    assert all(t.threshold == thr for t in res.trades if t.entry_time > first)


def test_fixed_interval_schedule(volatile):
    res = run_t_method_calibrated(volatile, replace(CFG, recalibrate_every=24))
    times = [t for t, _ in res.thresholds_used]
    grid = to_hourly_grid(volatile)
    idx = np.searchsorted(grid.times, np.array(times, dtype="datetime64[m]"))
    assert len(times) > 3
    assert (np.diff(idx) == 24).all()
    assert check_stop_tightness(volatile, res, per_entry=False) == []


def test_shadow_corpus_is_strictly_before(volatile):
    trades, _ = run_signal_only(volatile)
    target = trades[15]
    tau = target.exit_time - np.timedelta64(1, "m")
    before = calibration_corpus(volatile, CFG, Mode.T_METHOD, tau, strict=True)
    assert target not in before and trades[14] in before
    at = calibration_corpus(volatile, CFG, Mode.T_METHOD, target.exit_time, strict=True)
    assert target not in at
    after = calibration_corpus(volatile, CFG, Mode.T_METHOD, target.exit_time + np.timedelta64(1, "m"), strict=True)
    assert target in after


def test_shadow_matches_standalone_prefix_run(volatile):
    full, _ = run_signal_only(volatile)
    grid = to_hourly_grid(volatile)
    for tau in grid.times[100::97]:
        prefix, _ = run_signal_only(volatile.until(tau))
        prefix = [t for t in prefix if not t.forced and t.exit_time < tau]
        shadow = [t for t in full if not t.forced and t.exit_time < tau]
        assert prefix == shadow


@pytest.mark.parametrize("mode", [Mode.T_METHOD, Mode.R_METHOD])
def test_no_lookahead(volatile, mode):
    res = run_backtest(volatile, replace(CFG, mode=mode, rolling=RollingParams(m=150)))
    assert len(res.thresholds_used) > 5
    for tau, thr in res.thresholds_used:
        truncated = volatile.until(tau)
        report = calibrate_as_of(truncated, replace(CFG, rolling=RollingParams(m=150)), mode, tau, strict=True)
        assert report.threshold == thr


@pytest.mark.parametrize("mode", [Mode.T_METHOD, Mode.R_METHOD])
def test_stop_tightness_and_gap_through(volatile, mode):
    res = run_backtest(volatile, replace(CFG, mode=mode))
    stopped = [t for t in res.trades if t.exit_reason == "stop"]
    assert stopped
    assert check_stop_tightness(volatile, res) == []
    assert all(gap_through_ok(volatile, t) for t in stopped)


def test_disarmed_stops_reproduce_signal_only(volatile):
    base = run_backtest(volatile, BacktestConfig())
    res = run_t_method_calibrated(volatile, BacktestConfig(min_corpus=10**6))
    assert res.flags["calibration_unavailable"]
    assert res.thresholds_used == []
    assert res.trades == base.trades
    assert res.final_nlv == base.final_nlv
    assert np.array_equal(res.curve.nlv, base.curve.nlv)


def test_r_method_all_zero_drawdowns_disarms():
    s = minute_series(np.linspace(50, 150, 80 * 60), start="2016-01-04T00:00")
    config = BacktestConfig(min_corpus=1, rolling=RollingParams(l=1))
    res = run_r_method_calibrated(s, config)
    base = run_backtest(s, config)
    assert res.thresholds_used == []
    assert res.trades == base.trades and res.final_nlv == base.final_nlv


def test_r_window_larger_than_corpus_equals_full_calibration(volatile):
    config = replace(CFG, rolling=RollingParams(m=10**6))
    corpus = calibration_corpus(volatile, config, Mode.R_METHOD)
    report = calibrate_as_of(volatile, config, Mode.R_METHOD)
    from ddstop.drawdown_stats import bin_trades, calibrate_threshold

    direct = calibrate_threshold(bin_trades(corpus))
    assert report.flags["underfull"]
    assert report.threshold == direct.threshold and report.corpus_size == len(corpus)


def test_planted_threshold_recovered():
    series, d_star = generate_planted(3, PlantedSpec(n_trades=100))
    res = run_t_method_calibrated(series, BacktestConfig())
    report = calibrate_as_of(series, BacktestConfig(), Mode.T_METHOD)
    assert abs(report.threshold - d_star) <= report.bins.width
    last = res.thresholds_used[-1][1]
    assert abs(last - d_star) < 0.02


def test_buy_and_hold(volatile):
    res = run_backtest(volatile, BacktestConfig(mode=Mode.BUY_AND_HOLD))
    grid = to_hourly_grid(volatile)
    assert len(res.trades) == 1
    t = res.trades[0]
    assert t.entry_time == grid.times[19]
    assert res.final_nlv == pytest.approx(100_000 * volatile.prices[-1] / grid.prices[19], rel=1e-12)
    assert np.all(res.curve.nlv[: t.entry_index] == 100_000)


def test_insufficient_history():
    s = minute_series([1.0] * 300)
    for mode in Mode:
        with pytest.raises(InsufficientHistory):
            run_backtest(s, BacktestConfig(mode=mode))


def test_bundle(tmp_path, volatile):
    res = run_t_method_calibrated(volatile, CFG)
    res.write_bundle(tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "b").iterdir())
    assert names == ["equity.csv", "summary.json", "thresholds.csv", "trades.csv"]
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert summary["final_nlv"] == res.final_nlv
    assert summary["trade_count"] == len(res.trades)
    thresholds = (tmp_path / "b" / "thresholds.csv").read_text().splitlines()
    assert thresholds[0] == "timestamp,T" and len(thresholds) == len(res.thresholds_used) + 1
    equity = (tmp_path / "b" / "equity.csv").read_text().splitlines()
    assert equity[0] == "timestamp,nlv" and float(equity[-1].split(",")[1]) == res.final_nlv
