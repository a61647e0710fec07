"""Minute-bar price series: loading, validation, hourly resampling and synthesis.

Timestamps are held as ``numpy.datetime64[m]`` (UTC, minute precision) and
prices as ``float64``; both arrays are made read-only so a series can be
shared between concurrent backtests.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import (
    DuplicateTimestamp,
    EmptyFile,
    InvalidParameter,
    MalformedRow,
    NonPositivePrice,
)

MINUTES_PER_DAY = 390
TRADING_DAYS = 252
DEFAULT_START = np.datetime64("2016-01-04T14:30", "m")

_EPOCH = np.datetime64(0, "m")


class PriceBar(NamedTuple):
    timestamp: np.datetime64
    price: float


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def format_timestamp(ts) -> str:
    """ISO-8601 UTC text with an explicit ``Z`` suffix."""
    return str(np.datetime64(ts, "m")) + ":00Z"


def parse_timestamp(text: str) -> np.datetime64:
    """Parse ISO-8601 text into a UTC minute. Nonzero seconds are rejected."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"unparseable timestamp {text!r}") from exc
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    if dt.second or dt.microsecond:
        raise ValueError(f"timestamp {text!r} is not minute aligned")
    return np.datetime64(dt, "m")


@dataclass(frozen=True, eq=False)
class BarSeries:
    """Immutable, strictly time-ordered minute closes for one asset."""

    asset_id: str
    times: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times).astype("datetime64[m]")
        prices = np.asarray(self.prices, dtype=np.float64)
        if times.ndim != 1 or times.shape != prices.shape:
            raise InvalidParameter("times and prices must be 1-d arrays of equal length")
        if len(times) == 0:
            raise InvalidParameter("a BarSeries needs at least one bar")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise NonPositivePrice("prices must be finite and > 0")
        if len(times) > 1 and np.any(np.diff(times.astype(np.int64)) <= 0):
            raise DuplicateTimestamp("timestamps must be strictly increasing")
        object.__setattr__(self, "times", _readonly(times))
        object.__setattr__(self, "prices", _readonly(prices))

    def __len__(self):
        return len(self.prices)

    def __iter__(self) -> Iterator[PriceBar]:
        for t, p in zip(self.times, self.prices):
            yield PriceBar(t, float(p))

    def __eq__(self, other):
        if not isinstance(other, BarSeries):
            return NotImplemented
        return (
            self.asset_id == other.asset_id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.prices, other.prices)
        )

    @property
    def bars(self) -> list[PriceBar]:
        return list(self)

    @property
    def minutes(self) -> np.ndarray:
        """Timestamps as integer minutes since the Unix epoch."""
        return (self.times - _EPOCH).astype(np.int64)

    def index_at(self, ts) -> int:
        """Index of the latest bar at or before ``ts`` (-1 if none)."""
        return int(np.searchsorted(self.times, np.datetime64(ts, "m"), side="right")) - 1

    def until(self, ts) -> "BarSeries":
        """Prefix of the series holding every bar with timestamp <= ``ts``."""
        end = self.index_at(ts) + 1
        if end == 0:
            raise InvalidParameter(f"no bars at or before {ts}")
        return BarSeries(self.asset_id, self.times[:end], self.prices[:end])


@dataclass(frozen=True, eq=False)
class HourlyGrid:
    """Hourly decision points; ``source[k]`` indexes the minute bar behind point k."""

    times: np.ndarray
    prices: np.ndarray
    source: np.ndarray

    def __len__(self):
        return len(self.times)

    @property
    def points(self):
        return [(t, float(p), int(s)) for t, p, s in zip(self.times, self.prices, self.source)]


def to_hourly_grid(series: BarSeries) -> HourlyGrid:
    """Sample ``series`` at every hour boundary covered by the data.

    Boundary ``h`` gets a point when some bar lies in ``(h - 1h, h]``; its
    price is the latest such bar. Boundaries after the final bar are not
    emitted, so every decision point lies inside the data span.
    """
    m = series.minutes
    boundary = -(-m // 60) * 60
    last_of_group = np.flatnonzero(np.append(boundary[1:] != boundary[:-1], True))
    keep = last_of_group[boundary[last_of_group] <= m[-1]]
    times = (boundary[keep].astype("timedelta64[m]") + _EPOCH).astype("datetime64[m]")
    return HourlyGrid(
        times=_readonly(times),
        prices=_readonly(series.prices[keep]),
        source=_readonly(keep.astype(np.int64)),
    )


# -- CSV -------------------------------------------------------------------


def load_csv(path, asset_id: str | None = None) -> BarSeries:
    """Read a ``timestamp,price`` CSV into a validated BarSeries.

    Rows may arrive in any order; they are sorted by timestamp. Errors
    carry the 1-based line number of the offending row.
    """
    path = Path(path)
    if asset_id is None:
        asset_id = path.stem
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path}: empty file")
        if [h.strip().lower() for h in header] != ["timestamp", "price"]:
            raise MalformedRow(f"expected header 'timestamp,price', got {header!r}", line=1)
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise MalformedRow(f"expected 2 fields, got {len(row)}", line=line)
            try:
                ts = parse_timestamp(row[0])
            except ValueError as exc:
                raise MalformedRow(str(exc), line=line) from None
            try:
                price = float(row[1])
            except ValueError:
                raise MalformedRow(f"unparseable price {row[1]!r}", line=line) from None
            if not math.isfinite(price) or price <= 0:
                raise NonPositivePrice(f"price must be > 0, got {row[1].strip()}", line=line)
            rows.append((ts, price, line))
    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    for prev, cur in zip(rows, rows[1:]):
        if prev[0] == cur[0]:
            raise DuplicateTimestamp(f"duplicate timestamp {format_timestamp(cur[0])}", line=cur[2])
    times = np.array([r[0] for r in rows], dtype="datetime64[m]")
    prices = np.array([r[1] for r in rows], dtype=np.float64)
    return BarSeries(asset_id, times, prices)


def save_csv(series: BarSeries, path) -> None:
    # repr() gives the shortest text that parses back to the same double
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("timestamp,price\n")
        for t, p in zip(series.times, series.prices):
            fh.write(f"{format_timestamp(t)},{repr(float(p))}\n")


# -- synthetic data ----------------------------------------------------------


def _minute_times(start, n):
    start = np.datetime64(start, "m")
    return start + np.arange(n).astype("timedelta64[m]")


def generate_gbm(
    seed: int,
    p0: float = 100.0,
    mu: float = 0.0,
    sigma: float = 0.2,
    n_minutes: int = 30 * MINUTES_PER_DAY,
    *,
    start=DEFAULT_START,
    asset_id: str = "GBM",
) -> BarSeries:
    """Geometric Brownian motion sampled on a continuous minute clock.

    Log increments are i.i.d. normal with mean ``mu / (252*390)`` and
    variance ``sigma**2 / (252*390)``.
    """
    if not (p0 > 0 and math.isfinite(p0)):
        raise InvalidParameter(f"p0 must be > 0, got {p0}")
    if not sigma >= 0:
        raise InvalidParameter(f"sigma must be >= 0, got {sigma}")
    if int(n_minutes) != n_minutes or n_minutes < 1:
        raise InvalidParameter(f"n_minutes must be a positive integer, got {n_minutes}")
    n_minutes = int(n_minutes)
    per_year = TRADING_DAYS * MINUTES_PER_DAY
    rng = np.random.default_rng(seed)
    steps = rng.normal(mu / per_year, sigma / math.sqrt(per_year), size=n_minutes - 1)
    log_path = np.concatenate([[0.0], np.cumsum(steps)])
    return BarSeries(asset_id, _minute_times(start, n_minutes), p0 * np.exp(log_path))


@dataclass(frozen=True)
class PlantedSpec:
    """Two trade populations separated at drawdown ``d_star``.

    Winners dip by at most ``d_star`` and finish near ``+gain``; losers gap
    down to ``loss`` from a peak, so their drawdown is at least ``-loss``.
    """

    d_star: float = 0.02
    gain: float = 0.05
    loss: float = -0.05
    n_trades: int = 100
    win_fraction: float = 0.5
    p0: float = 100.0

    @property
    def n_winners(self) -> int:
        return int(round(self.win_fraction * self.n_trades))

    @property
    def n_losers(self) -> int:
        return self.n_trades - self.n_winners

    @property
    def degenerate(self) -> bool:
        """True when there are no losers, so any threshold >= the largest drawdown is optimal."""
        return self.n_losers == 0

    def validate(self):
        if not 0.001 <= self.d_star <= 0.2:
            raise InvalidParameter("d_star must lie in [0.001, 0.2]")
        if not self.gain >= 1.5 * self.d_star + 0.01:
            raise InvalidParameter("gain must be >= 1.5*d_star + 0.01")
        if not -0.9 < self.loss < -self.d_star:
            raise InvalidParameter("loss must lie in (-0.9, -d_star)")
        if self.n_trades < 1 or not 0.0 <= self.win_fraction <= 1.0:
            raise InvalidParameter("need n_trades >= 1 and win_fraction in [0, 1]")
        if not self.p0 > 0:
            raise InvalidParameter("p0 must be > 0")


# relative drift per hour while flat (down) or holding (up); keeps price off the SMA
_FLAT_DRIFT = 1e-5
_ENTRY_JUMP = 0.002
_SETTLE_HOURS = 21


class _PathBuilder:
    def __init__(self, p0):
        self.prices = [p0]

    @property
    def last(self):
        return self.prices[-1]

    def drift(self, minutes, per_hour):
        f = (1.0 + per_hour) ** (1.0 / 60.0)
        p = self.last
        for _ in range(minutes):
            p *= f
            self.prices.append(p)

    def ramp(self, minutes, target):
        start = self.last
        for i in range(1, minutes + 1):
            self.prices.append(start + (target - start) * i / minutes)

    def jump(self, target):
        self.prices.append(target)

    def settle_to_hour(self):
        """Drift down until the next bar falls on an hour boundary."""
        self.drift(_SETTLE_HOURS * 60, -_FLAT_DRIFT)
        while len(self.prices) % 60 != 0:
            self.drift(1, -_FLAT_DRIFT)


def generate_planted(
    seed: int,
    spec: PlantedSpec = PlantedSpec(),
    *,
    start=np.datetime64("2016-01-04T00:00", "m"),
    asset_id: str = "PLANTED",
) -> tuple[BarSeries, float]:
    """Build a series whose SMA-crossover trades carry a planted drawdown split.

    Returns the series and ``spec.d_star``, the drawdown level separating
    winners from losers (see ``PlantedSpec.degenerate`` for the no-loser case).
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    outcomes = np.array([True] * spec.n_winners + [False] * spec.n_losers)
    outcomes = outcomes[rng.permutation(len(outcomes))]
    rise = 1.5 * spec.d_star + 0.005
    exit_drop = min(0.002, spec.d_star / 2)

    b = _PathBuilder(spec.p0)
    b.settle_to_hour()
    for winner in outcomes:
        # entry bar sits on an hour boundary, so it is the grid price
        b.jump(b.last * (1.0 + _ENTRY_JUMP))
        entry = b.last
        if winner:
            b.ramp(30, entry * (1.0 + rise))
            b.drift(89, _FLAT_DRIFT)
            dip = rng.uniform(0.25, 1.0) * spec.d_star
            peak = b.last
            b.ramp(20, peak * (1.0 - dip))
            b.ramp(20, peak)
            b.ramp(60, entry * (1.0 + spec.gain))
            b.drift(22 * 60, _FLAT_DRIFT)
            b.jump(b.last * (1.0 - exit_drop))
        else:
            b.ramp(30, entry * (1.0 + rng.uniform(0.0, rise)))
            b.drift(int(rng.integers(90, 300)), _FLAT_DRIFT)
            b.jump(entry * (1.0 + spec.loss))
        b.settle_to_hour()
    prices = np.array(b.prices)
    return BarSeries(asset_id, _minute_times(start, len(prices)), prices), spec.d_star
