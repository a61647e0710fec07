"""Strategy backtests with trailing stops calibrated from drawdown histograms."""
from __future__ import annotations

import bisect
import csv
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .drawdown_stats import ThresholdReport, bin_trades, calibrate_threshold, default_bin_count
from .errors import AllZeroDrawdowns, EmptyCorpus, InsufficientHistory, InvalidParameter
from .market_data import BarSeries, format_timestamp, to_hourly_grid
from .rolling import RollingParams, calibrate_R, generate_artificial_trades
from .signals import (
    EquityCurve,
    TradeRecord,
    compute_sma,
    drawdown_between,
    run_signal_only,
    simulate,
    write_trades_csv,
)

log = logging.getLogger(__name__)


class Mode(str, Enum):
    SIGNAL_ONLY = "SignalOnly"
    T_METHOD = "TMethod"
    R_METHOD = "RMethod"
    BUY_AND_HOLD = "BuyAndHold"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        key = text.strip().lower().replace("-", "").replace("_", "")
        for mode in cls:
            if mode.value.lower() == key or mode.name.lower().replace("_", "") == key:
                return mode
        raise InvalidParameter(f"unknown mode {text!r}; choose from {[m.value for m in cls]}")


@dataclass(frozen=True)
class BacktestConfig:
    mode: Mode = Mode.SIGNAL_ONLY
    initial_cash: float = 100_000.0
    sma_period: int = 20
    n_policy: str = "sqrt"  # "sqrt" or "fixed"
    n_bins: Optional[int] = None
    rolling: RollingParams = RollingParams()
    # None: recalibrate at every entry; k: every k hourly points
    recalibrate_every: Optional[int] = None
    min_corpus: int = 30
    include_forced_final_trade: bool = True
    # replaces every calibrated threshold once the stop would be armed
    threshold_override: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode) if isinstance(self.mode, str) else self.mode)
        if not self.initial_cash > 0:
            raise InvalidParameter("initial_cash must be > 0")
        if self.min_corpus < 1:
            raise InvalidParameter("min_corpus must be >= 1")
        if self.sma_period < 1:
            raise InvalidParameter("sma_period must be >= 1")
        if self.n_policy not in ("sqrt", "fixed"):
            raise InvalidParameter(f"n_policy must be 'sqrt' or 'fixed', got {self.n_policy!r}")
        if self.n_policy == "fixed" and (self.n_bins is None or self.n_bins < 1):
            raise InvalidParameter("fixed n_policy needs n_bins >= 1")
        if self.recalibrate_every is not None and self.recalibrate_every < 1:
            raise InvalidParameter("recalibrate_every must be >= 1")

    def bin_count(self, corpus_size: int) -> int:
        if self.n_policy == "fixed":
            return self.n_bins
        return default_bin_count(corpus_size)


@dataclass(frozen=True, eq=False)
class BacktestResult:
    mode: Mode
    trades: list
    curve: EquityCurve
    final_nlv: float
    thresholds_used: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    asset_id: str = ""

    @property
    def stop_exits(self) -> int:
        return sum(t.exit_reason == "stop" for t in self.trades)

    def summary(self) -> dict:
        return {
            "asset": self.asset_id,
            "mode": self.mode.value,
            "final_nlv": self.final_nlv,
            "trade_count": len(self.trades),
            "stop_exits": self.stop_exits,
            "calibrations": len(self.thresholds_used),
            "flags": dict(sorted(self.flags.items())),
        }

    def write_bundle(self, directory) -> None:
        """Write trades.csv, equity.csv, thresholds.csv and summary.json."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_trades_csv(self.trades, directory / "trades.csv")
        with open(directory / "equity.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "nlv"])
            for t, v in zip(self.curve.times, self.curve.nlv.tolist()):
                w.writerow([format_timestamp(t), repr(v)])
        with open(directory / "thresholds.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "T"])
            for t, thr in self.thresholds_used:
                w.writerow([format_timestamp(t), repr(thr)])
        with open(directory / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class FixedStop:
    """A constant trailing-stop threshold for :func:`ddstop.signals.simulate`."""

    def __init__(self, threshold: float):
        self.active = threshold

    def at_grid(self, k):
        pass

    def at_entry(self, k):
        pass


class _StopSchedule:
    """Owns the active stop threshold and decides when to recalibrate.

    ``calibrate(k)`` returns a threshold computed from data strictly before
    hourly point ``k``, or None while calibration is unavailable.
    """

    def __init__(self, calibrate: Callable[[int], Optional[float]], grid_times, every, override):
        self._calibrate = calibrate
        self._times = grid_times
        self._every = every
        self._override = override
        self._last = None
        self.active = None
        self.used = []

    def _run(self, k):
        thr = self._calibrate(k)
        if thr is not None and self._override is not None:
            thr = self._override
        if thr is not None:
            self.used.append((self._times[k], thr))
        return thr

    def at_grid(self, k):
        if self._every is None:
            return
        if self._last is None or k - self._last >= self._every:
            thr = self._run(k)
            if thr is not None:
                self.active = thr
                self._last = k

    def at_entry(self, k):
        if self._every is None:
            self.active = self._run(k)


def _corpus_calibrator(config: BacktestConfig, grid_times, corpus: list, window: Optional[int]):
    """Threshold at hourly point k from ``corpus`` trades exiting strictly before it.

    ``corpus`` must be sorted by exit time; ``window`` keeps only the latest
    trades. Results are cached on the number of eligible trades.
    """
    exits = [t.exit_time for t in corpus]
    cache = {}

    def calibrate(k):
        count = bisect.bisect_left(exits, grid_times[k])
        if count not in cache:
            start = 0 if window is None else max(0, count - window)
            sample = corpus[start:count]
            thr = None
            if len(sample) >= config.min_corpus:
                try:
                    thr = calibrate_threshold(bin_trades(sample, config.bin_count(len(sample)))).threshold
                except AllZeroDrawdowns:
                    log.debug("all-zero drawdowns in %d-trade corpus; stop disarmed", len(sample))
            cache[count] = thr
        return cache[count]

    return calibrate


def _buy_and_hold(series, grid, sma, config):
    k = sma.first_defined
    j = int(grid.source[k])
    n = len(series)
    if j >= n - 1:
        raise InsufficientHistory("no bars after the first SMA-defined point")
    prices = series.prices
    shares = config.initial_cash / prices[j]
    nlv = np.full(n, config.initial_cash)
    nlv[j:] = shares * prices[j:]
    trade = TradeRecord(
        entry_time=grid.times[k],
        exit_time=series.times[-1],
        entry_price=float(prices[j]),
        exit_price=float(prices[-1]),
        max_drawdown=drawdown_between(prices, j, n - 1),
        exit_reason="forced",
        entry_index=j,
        exit_index=n - 1,
    )
    return [trade], EquityCurve(series.times, nlv)


def run_backtest(series: BarSeries, config: BacktestConfig) -> BacktestResult:
    """Backtest ``series`` under ``config.mode``.

    TMethod calibrates on the Signal-Only trades a parallel stopless run has
    completed; RMethod on fixed-horizon artificial trades. Until a corpus of
    ``min_corpus`` trades exists the stop stays disarmed.
    """
    grid = to_hourly_grid(series)
    if len(grid) < config.sma_period:
        raise InsufficientHistory(f"need {config.sma_period} hourly points, have {len(grid)}")
    sma = compute_sma(grid, config.sma_period)
    mode = config.mode
    flags = {}
    used = []

    if mode is Mode.SIGNAL_ONLY:
        trades, curve = simulate(series, grid, sma, None, config.initial_cash)
    elif mode is Mode.BUY_AND_HOLD:
        trades, curve = _buy_and_hold(series, grid, sma, config)
    else:
        if mode is Mode.T_METHOD:
            shadow, _ = simulate(series, grid, sma, None, 1.0)
            # the forced final trade closes at the last bar, so it can never precede a decision point
            corpus = [t for t in shadow if not t.forced]
            calibrate = _corpus_calibrator(config, grid.times, corpus, None)
        else:
            corpus = generate_artificial_trades(series, grid, sma, config.rolling.l)
            calibrate = _corpus_calibrator(config, grid.times, corpus, config.rolling.m)
        stops = _StopSchedule(calibrate, grid.times, config.recalibrate_every, config.threshold_override)
        trades, curve = simulate(series, grid, sma, stops, config.initial_cash)
        used = stops.used
        flags["calibration_unavailable"] = not used

    return BacktestResult(
        mode=mode,
        trades=trades,
        curve=curve,
        final_nlv=curve.final,
        thresholds_used=used,
        flags=flags,
        asset_id=series.asset_id,
    )


def run_t_method_calibrated(series: BarSeries, config: BacktestConfig = BacktestConfig()) -> BacktestResult:
    return run_backtest(series, replace(config, mode=Mode.T_METHOD))


def run_r_method_calibrated(series: BarSeries, config: BacktestConfig = BacktestConfig()) -> BacktestResult:
    return run_backtest(series, replace(config, mode=Mode.R_METHOD))


def calibration_corpus(
    series: BarSeries,
    config: BacktestConfig,
    method: Mode,
    as_of=None,
    *,
    strict: bool = False,
) -> list[TradeRecord]:
    """Trades available for calibration using only bars at or before ``as_of``.

    With ``strict`` only trades completed strictly before ``as_of`` count and
    forced liquidations are dropped, which is what a live backtest sees at a
    decision point. Otherwise forced trades follow
    ``config.include_forced_final_trade``. RMethod corpora are not windowed here.
    """
    method = Mode.parse(method) if isinstance(method, str) else method
    as_of = series.times[-1] if as_of is None else np.datetime64(as_of, "m")
    prefix = series.until(as_of)
    grid = to_hourly_grid(prefix)
    if len(grid) < config.sma_period:
        raise InsufficientHistory(f"need {config.sma_period} hourly points, have {len(grid)}")
    sma = compute_sma(grid, config.sma_period)
    if method is Mode.T_METHOD:
        trades, _ = run_signal_only(prefix, sma, grid)
        if strict:
            return [t for t in trades if not t.forced and t.exit_time < as_of]
        return [t for t in trades if config.include_forced_final_trade or not t.forced]
    if method is Mode.R_METHOD:
        trades = generate_artificial_trades(prefix, grid, sma, config.rolling.l, as_of)
        if strict:
            trades = [t for t in trades if t.exit_time < as_of]
        return trades
    raise InvalidParameter(f"{method.value} has no calibration corpus")


def calibrate_as_of(
    series: BarSeries,
    config: BacktestConfig,
    method: Mode,
    as_of=None,
    *,
    strict: bool = False,
) -> ThresholdReport:
    """Threshold report for ``method`` from data up to ``as_of``."""
    method = Mode.parse(method) if isinstance(method, str) else method
    corpus = calibration_corpus(series, config, method, as_of, strict=strict)
    if not corpus:
        raise EmptyCorpus("no completed trades to calibrate on")
    if method is Mode.R_METHOD:
        size = min(len(corpus), config.rolling.m)
        return calibrate_R(corpus, config.rolling, config.bin_count(size))
    return calibrate_threshold(bin_trades(corpus, config.bin_count(len(corpus))))
