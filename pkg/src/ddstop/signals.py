"""Hourly SMA crossover strategy, per-trade drawdowns and trade-list CSV export."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptyWindow, InsufficientHistory, InvalidParameter
from .market_data import BarSeries, HourlyGrid, format_timestamp, to_hourly_grid

DEFAULT_SMA_PERIOD = 20

TRADE_CSV_HEADER = [
    "entry_time",
    "exit_time",
    "entry_price",
    "exit_price",
    "return",
    "max_drawdown",
    "outcome",
    "kind",
]


@dataclass(frozen=True, eq=False)
class SmaSeries:
    """Grid-aligned simple moving average; ``values[k]`` is NaN for k < period-1."""

    times: np.ndarray
    values: np.ndarray
    period: int

    @property
    def first_defined(self) -> int:
        return self.period - 1

    @property
    def points(self):
        return [(t, float(v)) for t, v in zip(self.times[self.first_defined:], self.values[self.first_defined:])]


@dataclass(frozen=True)
class TradeRecord:
    entry_time: np.datetime64
    exit_time: np.datetime64
    entry_price: float
    exit_price: float
    max_drawdown: float
    kind: str = "real"
    exit_reason: str = "signal"
    # bar indices into the source series; not part of the CSV schema
    entry_index: int = field(default=-1, compare=False)
    exit_index: int = field(default=-1, compare=False)
    threshold: Optional[float] = field(default=None, compare=False)

    @property
    def trade_return(self) -> float:
        return self.exit_price / self.entry_price - 1.0

    @property
    def outcome(self) -> str:
        # a scratch trade counts as a loss
        return "W" if self.trade_return > 0 else "L"

    @property
    def forced(self) -> bool:
        return self.exit_reason == "forced"

    def csv_row(self):
        return [
            format_timestamp(self.entry_time),
            format_timestamp(self.exit_time),
            repr(self.entry_price),
            repr(self.exit_price),
            repr(self.trade_return),
            repr(self.max_drawdown),
            self.outcome,
            self.kind,
        ]


@dataclass(frozen=True, eq=False)
class EquityCurve:
    times: np.ndarray
    nlv: np.ndarray

    @property
    def samples(self):
        return list(zip(self.times, self.nlv.tolist()))

    @property
    def final(self) -> float:
        return float(self.nlv[-1])


def compute_sma(grid: HourlyGrid, period: int = DEFAULT_SMA_PERIOD) -> SmaSeries:
    if period < 1:
        raise InvalidParameter(f"period must be >= 1, got {period}")
    if len(grid) < period:
        raise InsufficientHistory(f"need {period} hourly points for the SMA, have {len(grid)}")
    windows = sliding_window_view(grid.prices, period)
    newest = windows[:, -1]
    # centred on the newest price so a constant window averages to exactly that price
    means = newest + (windows - newest[:, None]).sum(axis=1) / period
    values = np.full(len(grid), np.nan)
    values[period - 1:] = means
    values.setflags(write=False)
    return SmaSeries(grid.times, values, period)


def drawdown_between(prices: np.ndarray, start: int, stop: int) -> float:
    """Maximum fractional fall from the running peak over ``prices[start:stop+1]``."""
    window = prices[start:stop + 1]
    if len(window) == 0:
        raise EmptyWindow("empty drawdown window")
    peak = np.maximum.accumulate(window)
    return float(np.max((peak - window) / peak))


def measure_max_drawdown(series: BarSeries, start, end) -> float:
    """Max drawdown over the bars from ``start`` to ``end`` inclusive.

    The window opens at the latest bar at or before ``start`` (the price in
    force at that instant) and closes at the latest bar at or before ``end``.
    """
    start = np.datetime64(start, "m")
    end = np.datetime64(end, "m")
    if not start < end:
        raise EmptyWindow(f"window start {start} is not before end {end}")
    i0, i1 = series.index_at(start), series.index_at(end)
    if i0 < 0:
        raise EmptyWindow(f"no bar at or before {start}")
    return drawdown_between(series.prices, i0, i1)


def _close_trade(series, entry_k, grid, entry_j, exit_j, reason, threshold, kind="real"):
    return TradeRecord(
        entry_time=grid.times[entry_k],
        exit_time=series.times[exit_j],
        entry_price=float(grid.prices[entry_k]),
        exit_price=float(series.prices[exit_j]),
        max_drawdown=drawdown_between(series.prices, entry_j, exit_j),
        kind=kind,
        exit_reason=reason,
        entry_index=entry_j,
        exit_index=exit_j,
        threshold=threshold,
    )


def simulate(series: BarSeries, grid: HourlyGrid, sma: SmaSeries, stops=None, initial_cash: float = 1.0):
    """Run the long-only SMA state machine, optionally with a trailing stop.

    Per minute bar: refresh the SMA level if the bar sits exactly on an
    hourly point; while long, exit on ``price <= (1-T) * running_max``
    (checked first) or ``price < level``. Then, if the bar is the source of
    an hourly point, refresh the level (gap case), let ``stops`` recalibrate,
    and enter when flat and ``price > level``.

    ``stops`` is any object with ``active`` (threshold or None) and hooks
    ``at_grid(k)`` and ``at_entry(k)``; ``None`` means no stop at all.
    Returns ``(trades, curve)``.
    """
    if len(grid) < sma.period:
        raise InsufficientHistory(f"need {sma.period} hourly points, have {len(grid)}")
    prices = series.prices.tolist()
    n = len(prices)
    grid_at = [-1] * n
    for k, j in enumerate(grid.source.tolist()):
        grid_at[j] = k
    on_boundary = (grid.times == series.times[grid.source]).tolist()
    sma_values = sma.values.tolist()
    first = sma.first_defined

    trades = []
    nlv = [0.0] * n
    cash = float(initial_cash)
    shares = 0.0
    long = False
    level = None
    entry_k = entry_j = -1
    peak = 0.0
    threshold = None

    for j in range(n):
        p = prices[j]
        k = grid_at[j]
        if k >= first and on_boundary[k]:
            level = sma_values[k]
        if long:
            if p > peak:
                peak = p
            if stops is not None:
                threshold = stops.active
            if threshold is not None and p <= (1.0 - threshold) * peak:
                reason = "stop"
            elif p < level:
                reason = "signal"
            else:
                reason = None
            if reason is not None:
                trades.append(_close_trade(series, entry_k, grid, entry_j, j, reason, threshold))
                cash = shares * p
                shares = 0.0
                long = False
        if k >= first:
            level = sma_values[k]
            if stops is not None:
                stops.at_grid(k)
            if not long and p > level and j < n - 1:
                if stops is not None:
                    stops.at_entry(k)
                long = True
                entry_k, entry_j = k, j
                peak = p
                shares = cash / p
                cash = 0.0
        nlv[j] = shares * p if long else cash

    if long:
        j = n - 1
        if stops is not None:
            threshold = stops.active
        trades.append(_close_trade(series, entry_k, grid, entry_j, j, "forced", threshold))
        cash = shares * prices[j]
        nlv[j] = cash

    return trades, EquityCurve(series.times, np.array(nlv))


def run_signal_only(
    series: BarSeries,
    sma: SmaSeries | None = None,
    grid: HourlyGrid | None = None,
    *,
    period: int = DEFAULT_SMA_PERIOD,
    initial_cash: float = 1.0,
):
    """Stopless baseline: returns ``(trades, curve)``."""
    if grid is None:
        grid = to_hourly_grid(series)
    if sma is None:
        sma = compute_sma(grid, period)
    return simulate(series, grid, sma, None, initial_cash)


def write_trades_csv(trades: Sequence[TradeRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRADE_CSV_HEADER)
        for t in trades:
            w.writerow(t.csv_row())
