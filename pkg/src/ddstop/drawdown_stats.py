"""Drawdown histogram and expected-return threshold selection.

Trades are binned by maximum drawdown into ``n`` equal-width bins over
``[0, D_max]``. Each bin gets the conditional expected return
``E(r | D in B_i)`` and probability ``P(D in B_i)``; the running sum of their
products is the expected return of a stop placed at each bin's right edge,
and the stop threshold is the edge where that sum peaks.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AllZeroDrawdowns, EmptyCorpus, InvalidParameter


@dataclass(frozen=True, eq=False)
class DrawdownBins:
    n: int
    width: float
    upper_edges: np.ndarray
    count_win: np.ndarray
    count_loss: np.ndarray
    sum_return_win: np.ndarray
    sum_return_loss: np.ndarray
    max_drawdown: float

    @property
    def count_total(self) -> np.ndarray:
        return self.count_win + self.count_loss

    @property
    def corpus_size(self) -> int:
        return int(self.count_total.sum())

    @property
    def lower_edges(self) -> np.ndarray:
        return np.concatenate([[0.0], self.upper_edges[:-1]])


@dataclass(frozen=True, eq=False)
class ThresholdReport:
    bins: DrawdownBins
    expectations: np.ndarray
    probabilities: np.ndarray
    cumulative: np.ndarray
    index: int
    threshold: float
    corpus_size: int
    flags: dict = field(default_factory=dict)

    @property
    def expected_return_negative(self) -> bool:
        return bool(self.flags.get("expected_return_negative", False))

    def to_dict(self) -> dict:
        return {
            "n_bins": self.bins.n,
            "width": self.bins.width,
            "upper_edges": self.bins.upper_edges.tolist(),
            "e": self.expectations.tolist(),
            "p": self.probabilities.tolist(),
            "v": self.cumulative.tolist(),
            "k_star": self.index,
            "T": self.threshold,
            "corpus_size": self.corpus_size,
            "flags": dict(sorted(self.flags.items())),
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_histogram_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_upper_edge", "win_count", "loss_count"])
            for edge, nw, nl in zip(self.bins.upper_edges, self.bins.count_win, self.bins.count_loss):
                w.writerow([repr(float(edge)), int(nw), int(nl)])


def default_bin_count(corpus_size: int) -> int:
    """Square-root rule: ``ceil(sqrt(corpus_size))``, at least 1."""
    if corpus_size < 1:
        raise InvalidParameter(f"corpus_size must be >= 1, got {corpus_size}")
    root = math.isqrt(corpus_size)
    return root if root * root == corpus_size else root + 1


def assign_bins(drawdowns, upper_edges) -> np.ndarray:
    """Zero-based bin index per drawdown; bins are ``[lo, hi)`` except the last, which is closed."""
    idx = np.searchsorted(upper_edges, drawdowns, side="right")
    return np.minimum(idx, len(upper_edges) - 1)


def bin_arrays(drawdowns, returns, n: int) -> DrawdownBins:
    """Histogram of raw ``(drawdown, return)`` arrays; see :func:`bin_trades`."""
    drawdowns = np.asarray(drawdowns, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    if len(drawdowns) == 0:
        raise EmptyCorpus("no trades to bin")
    if n < 1:
        raise InvalidParameter(f"bin count must be >= 1, got {n}")
    if np.any(drawdowns < 0):
        raise InvalidParameter("drawdowns must be >= 0")
    d_max = float(drawdowns.max())
    if d_max == 0.0:
        raise AllZeroDrawdowns(f"all {len(drawdowns)} trades have zero drawdown")
    width = d_max / n
    edges = np.arange(1, n + 1) * width
    edges[-1] = d_max
    idx = assign_bins(drawdowns, edges)
    win = returns > 0
    return DrawdownBins(
        n=n,
        width=width,
        upper_edges=edges,
        count_win=np.bincount(idx[win], minlength=n),
        count_loss=np.bincount(idx[~win], minlength=n),
        sum_return_win=np.bincount(idx[win], weights=returns[win], minlength=n),
        sum_return_loss=np.bincount(idx[~win], weights=returns[~win], minlength=n),
        max_drawdown=d_max,
    )


def bin_trades(trades: Sequence, n: int | None = None) -> DrawdownBins:
    """Bin ``trades`` (TradeRecord-like) by max drawdown; ``n=None`` uses the sqrt rule."""
    if len(trades) == 0:
        raise EmptyCorpus("no trades to bin")
    if n is None:
        n = default_bin_count(len(trades))
    return bin_arrays(
        [t.max_drawdown for t in trades],
        [t.trade_return for t in trades],
        n,
    )


def conditional_expectations(bins: DrawdownBins) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin ``E(r | D in B_i)`` and ``P(D in B_i)``; empty bins give ``(0, 0)``.

    The expectation is assembled from its loss and win parts,
    ``E(r|L,B) P(L|B) + E(r|W,B) P(W|B)``.
    """
    total = bins.count_total.astype(np.float64)
    e = np.zeros(bins.n)
    for i in range(bins.n):
        if total[i] == 0:
            continue
        nl, nw = bins.count_loss[i], bins.count_win[i]
        if nl:
            e[i] += (bins.sum_return_loss[i] / nl) * (nl / total[i])
        if nw:
            e[i] += (bins.sum_return_win[i] / nw) * (nw / total[i])
    p = total / bins.corpus_size
    return e, p


def cumulative_expectation(expectations, probabilities=None) -> np.ndarray:
    """Running sums ``v_k = sum_{i<=k} e_i p_i``.

    Accepts either two arrays or one sequence of ``(e_i, p_i)`` pairs.
    """
    if probabilities is None:
        pairs = np.asarray(expectations, dtype=np.float64).reshape(-1, 2)
        expectations, probabilities = pairs[:, 0], pairs[:, 1]
    terms = np.asarray(expectations, dtype=np.float64) * np.asarray(probabilities, dtype=np.float64)
    if len(terms) == 0:
        raise EmptyCorpus("no bins to accumulate")
    return np.cumsum(terms)


def calibrate_threshold(bins: DrawdownBins) -> ThresholdReport:
    """Pick the right bin edge that maximises the cumulative expected return.

    Ties resolve to the smallest index, i.e. the tightest stop.
    """
    e, p = conditional_expectations(bins)
    v = cumulative_expectation(e, p)
    k = int(np.argmax(v))
    return ThresholdReport(
        bins=bins,
        expectations=e,
        probabilities=p,
        cumulative=v,
        index=k,
        threshold=float(bins.upper_edges[k]),
        corpus_size=bins.corpus_size,
        flags={"expected_return_negative": bool(v[k] < 0)},
    )
