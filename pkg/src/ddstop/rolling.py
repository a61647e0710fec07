"""Fixed-horizon artificial trades and trailing-window threshold calibration."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .drawdown_stats import ThresholdReport, bin_trades, calibrate_threshold
from .errors import EmptyCorpus, InsufficientHistory, InvalidParameter
from .market_data import BarSeries, HourlyGrid
from .signals import SmaSeries, TradeRecord, drawdown_between


@dataclass(frozen=True)
class RollingParams:
    l: int = 20  # holding horizon, in hourly points
    m: int = 250  # trailing window, in trades

    def __post_init__(self):
        if self.l < 1 or self.m < 1:
            raise InvalidParameter(f"need l >= 1 and m >= 1, got l={self.l}, m={self.m}")


def generate_artificial_trades(
    series: BarSeries,
    grid: HourlyGrid,
    sma: SmaSeries,
    l: int = 20,
    as_of=None,
) -> list[TradeRecord]:
    """One pseudo-trade per hourly point where price > SMA, held exactly ``l`` points.

    Only trades whose exit point is at or before ``as_of`` are emitted
    (``None`` means the end of the grid). Exit signals and stops are ignored
    and trades overlap freely. Output is ordered by exit time.
    """
    if l < 1:
        raise InvalidParameter(f"l must be >= 1, got {l}")
    if len(grid) < sma.period:
        raise InsufficientHistory(f"need {sma.period} hourly points, have {len(grid)}")
    last = len(grid) - 1
    if as_of is not None:
        last = int(np.searchsorted(grid.times, np.datetime64(as_of, "m"), side="right")) - 1
    prices = series.prices
    out = []
    for k in range(sma.first_defined, last - l + 1):
        if not grid.prices[k] > sma.values[k]:
            continue
        x = k + l
        i0, i1 = int(grid.source[k]), int(grid.source[x])
        out.append(
            TradeRecord(
                entry_time=grid.times[k],
                exit_time=grid.times[x],
                entry_price=float(grid.prices[k]),
                exit_price=float(grid.prices[x]),
                max_drawdown=drawdown_between(prices, i0, i1),
                kind="artificial",
                exit_reason="horizon",
                entry_index=i0,
                exit_index=i1,
            )
        )
    return out


def recent_window(trades: Sequence[TradeRecord], m: int) -> list[TradeRecord]:
    """The ``m`` most recent trades by exit time (ties by entry time), oldest first."""
    ordered = sorted(trades, key=lambda t: (t.exit_time, t.entry_time))
    return ordered[-m:]


def calibrate_R(
    artificial: Sequence[TradeRecord],
    params: RollingParams = RollingParams(),
    n: int | None = None,
) -> ThresholdReport:
    """Calibrate on the trailing ``params.m`` artificial trades.

    Sets the ``underfull`` flag when fewer than ``m`` trades were available.
    """
    if len(artificial) == 0:
        raise EmptyCorpus("no completed artificial trades")
    corpus = recent_window(artificial, params.m)
    report = calibrate_threshold(bin_trades(corpus, n))
    flags = dict(report.flags, underfull=len(corpus) < params.m)
    return replace(report, flags=flags)
