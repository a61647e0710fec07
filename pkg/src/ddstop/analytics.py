"""Cross-asset comparison metrics and the trade-count error analysis."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import betainc

from .errors import (
    EmptyInput,
    LengthMismatch,
    MalformedRow,
    NonPositiveBaseline,
    TooFewSamples,
    ZeroVariance,
)

COMPARISON_HEADER = ["asset", "delta_nlv_ts", "delta_nlv_rs", "trades"]
COLUMNS = {"TS": "delta_nlv_ts", "RS": "delta_nlv_rs"}


@dataclass(frozen=True)
class AssetComparison:
    asset_id: str
    delta_nlv_ts: Optional[float]
    delta_nlv_rs: Optional[float]
    signal_only_trades: Optional[int]

    def delta(self, column: str) -> Optional[float]:
        return getattr(self, COLUMNS[column.upper()])


@dataclass(frozen=True)
class AggregateSummary:
    n_assets: int
    win_fraction: float
    mean_gain_winners: float
    mean_loss_losers: float
    expected_change: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p_value: float
    n: int

    def to_dict(self):
        return asdict(self)


def delta_nlv(nlv_variant: float, nlv_signal: float) -> float:
    """Fractional change of a variant's final NLV relative to the Signal-Only NLV."""
    if not nlv_signal > 0:
        raise NonPositiveBaseline(f"baseline NLV must be > 0, got {nlv_signal}")
    return (nlv_variant - nlv_signal) / nlv_signal


def aggregate(comparisons: Sequence[AssetComparison], column: str = "TS") -> AggregateSummary:
    """Win rate and conditional mean changes for one delta column.

    A strictly positive delta is a win; zero counts with the losers. Rows
    with no value in ``column`` are skipped.
    """
    deltas = [c.delta(column) for c in comparisons]
    deltas = np.array([d for d in deltas if d is not None], dtype=np.float64)
    if len(deltas) == 0:
        raise EmptyInput(f"no {column} deltas to aggregate")
    wins = deltas[deltas > 0]
    losses = deltas[deltas <= 0]
    win_fraction = len(wins) / len(deltas)
    gain = float(wins.mean()) if len(wins) else 0.0
    loss = float(losses.mean()) if len(losses) else 0.0
    return AggregateSummary(
        n_assets=len(deltas),
        win_fraction=win_fraction,
        mean_gain_winners=gain,
        mean_loss_losers=loss,
        expected_change=win_fraction * gain + (1.0 - win_fraction) * loss,
    )


def t_two_sided_p(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t via the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def pearson(x, y) -> CorrelationResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"inputs differ in shape: {x.shape} vs {y.shape}")
    n = len(x)
    if n < 3:
        raise TooFewSamples(f"need at least 3 samples, have {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ZeroVariance("an input has zero variance")
    rho = float(dx @ dy) / math.sqrt(sxx * syy)
    rho = max(-1.0, min(1.0, rho))
    df = n - 2
    if abs(rho) == 1.0:
        return CorrelationResult(rho, 0.0, n)
    t = rho * math.sqrt(df / (1.0 - rho * rho))
    return CorrelationResult(rho, t_two_sided_p(t, df), n)


def scatter_data(comparisons: Sequence[AssetComparison], column: str = "TS"):
    """``(trades, delta)`` pairs for rows that carry both values."""
    return [
        (c.signal_only_trades, c.delta(column))
        for c in comparisons
        if c.signal_only_trades is not None and c.delta(column) is not None
    ]


def error_analysis(comparisons: Sequence[AssetComparison], column: str = "TS") -> CorrelationResult:
    """Correlate Signal-Only trade counts with the chosen delta column."""
    pairs = scatter_data(comparisons, column)
    if len(pairs) < 3:
        raise TooFewSamples(f"need at least 3 assets, have {len(pairs)}")
    trades, deltas = zip(*pairs)
    return pearson(trades, deltas)


# -- comparison table I/O ------------------------------------------------------


def format_delta(value: Optional[float], decimals: int = 6) -> str:
    return "" if value is None else f"{value:.{decimals}f}"


def write_comparison_csv(comparisons: Sequence[AssetComparison], path, decimals: int = 6) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_HEADER)
        for c in comparisons:
            w.writerow([
                c.asset_id,
                format_delta(c.delta_nlv_ts, decimals),
                format_delta(c.delta_nlv_rs, decimals),
                "" if c.signal_only_trades is None else str(c.signal_only_trades),
            ])


def read_comparison_csv(path) -> list[AssetComparison]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != COMPARISON_HEADER:
            raise MalformedRow(f"expected header {','.join(COMPARISON_HEADER)}", line=1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRow(f"expected 4 fields, got {len(row)}", line=line)
            try:
                ts = float(row[1]) if row[1].strip() else None
                rs = float(row[2]) if row[2].strip() else None
                trades = int(row[3]) if row[3].strip() else None
            except ValueError as exc:
                raise MalformedRow(str(exc), line=line) from None
            out.append(AssetComparison(row[0].strip(), ts, rs, trades))
    return out


def write_scatter_csv(pairs, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trades", "delta_nlv"])
        for trades, delta in pairs:
            w.writerow([trades, repr(float(delta))])
