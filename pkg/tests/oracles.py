"""Slow, independently written reference computations used as test oracles.

Nothing here imports the code paths it checks; each oracle works from raw
timestamps, prices, drawdowns and returns with plain Python loops.
"""
import math

import numpy as np
from scipy.integrate import quad


def brute_force_drawdown(prices):
    """Max of (p_i - p_j) / p_i over all i <= j."""
    best = 0.0
    for j in range(len(prices)):
        for i in range(j + 1):
            best = max(best, (prices[i] - prices[j]) / prices[i])
    return best


def pairwise_drawdown(prices):
    """All-pairs version of brute_force_drawdown: every i <= j, one trough column at a time."""
    p = np.asarray(prices, dtype=np.float64)
    inv = 1.0 / p
    return max(0.0, max(float((1.0 - p[j] * inv[:j + 1]).max()) for j in range(len(p))))


def minutes_of(times):
    return [int(t) for t in (np.asarray(times).astype("datetime64[m]").astype(np.int64))]


def brute_force_grid(times, prices):
    """Scan every hour boundary between the first and last bar."""
    m = minutes_of(times)
    out = []
    h = (m[0] // 60) * 60
    while h <= m[-1]:
        members = [i for i in range(len(m)) if h - 60 < m[i] <= h]
        if members:
            i = members[-1]
            out.append((h, float(prices[i]), i))
        h += 60
    return out


def naive_sma(values, period):
    return [math.fsum(values[k - period + 1:k + 1]) / period for k in range(period - 1, len(values))]


def bin_of(d, width, d_max, n):
    for i in range(n):
        hi = (i + 1) * width if i < n - 1 else d_max
        if d < hi or i == n - 1:
            return i


def brute_force_threshold(drawdowns, returns, n):
    """Evaluate the cumulative expected return at every bin edge straight from raw trades.

    Returns ``(k_star, threshold, v)``.
    """
    total = len(drawdowns)
    d_max = max(drawdowns)
    width = d_max / n
    edges = [(i + 1) * width for i in range(n - 1)] + [d_max]
    bins = [bin_of(d, width, d_max, n) for d in drawdowns]
    v = []
    for k in range(n):
        acc = 0.0
        for b, r in zip(bins, returns):
            if b <= k:
                acc += r
        v.append(acc / total)
    k_star = 0
    for k in range(1, n):
        if v[k] > v[k_star]:
            k_star = k
    return k_star, edges[k_star], v


def sqrt_bins(count):
    n = 1
    while n * n < count:
        n += 1
    return n


def t_density_p_value(rho, n):
    """Two-sided p-value by integrating the Student-t density numerically."""
    df = n - 2
    t = abs(rho) * math.sqrt(df / (1 - rho * rho))
    log_c = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)

    def pdf(x):
        return math.exp(log_c - (df + 1) / 2 * math.log1p(x * x / df))

    # split the tail so quad resolves the peak region
    upper = t + 50.0
    head, _ = quad(pdf, t, upper, epsabs=1e-14, epsrel=1e-12, limit=200)
    tail, _ = quad(pdf, upper, math.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    return 2 * (head + tail)


class RefTrade:
    def __init__(self, entry_time, exit_time, entry_price, exit_price, drawdown, reason, threshold):
        self.entry_time = entry_time
        self.exit_time = exit_time
        self.entry_price = entry_price
        self.exit_price = exit_price
        self.max_drawdown = drawdown
        self.exit_reason = reason
        self.threshold = threshold

    @property
    def trade_return(self):
        return self.exit_price / self.entry_price - 1.0


def _ref_grid_fast(m, prices):
    """Same rule as brute_force_grid but with a single forward pass."""
    out = []
    for i in range(len(m)):
        h = m[i] if m[i] % 60 == 0 else (m[i] // 60 + 1) * 60
        if h > m[-1]:
            break
        if out and out[-1][0] == h:
            out[-1] = (h, float(prices[i]), i)
        else:
            out.append((h, float(prices[i]), i))
    return out


def reference_backtest(times, prices, period=20, threshold_at=None):
    """Event-queue simulator of the SMA strategy with an optional trailing stop.

    ``threshold_at(entry_minute, signal_trades_so_far)`` returns the stop for
    a new position (or None). Returns the list of RefTrade.
    """
    m = minutes_of(times)
    prices = [float(p) for p in prices]
    n = len(prices)
    grid = _ref_grid_fast(m, prices)
    sma = {}
    for k in range(period - 1, len(grid)):
        sma[k] = math.fsum(g[1] for g in grid[k - period + 1:k + 1]) / period

    events = []
    for k, (h, _, _) in enumerate(grid):
        if k in sma:
            events.append((h, 0, k))
            events.append((h, 2, k))
    for i, t in enumerate(m):
        events.append((t, 1, i))
    events.sort()

    trades = []
    level = None
    pos = None  # dict with entry info while long
    for t, kind, ref in events:
        if kind == 0:
            level = sma[ref]
        elif kind == 1:
            if pos is None:
                continue
            p = prices[ref]
            pos["peak"] = max(pos["peak"], p)
            pos["dd"] = max(pos["dd"], (pos["peak"] - p) / pos["peak"])
            thr = pos["thr"]
            reason = None
            if thr is not None and p <= (1.0 - thr) * pos["peak"]:
                reason = "stop"
            elif p < level:
                reason = "signal"
            if reason:
                trades.append(RefTrade(pos["t"], t, pos["p"], p, pos["dd"], reason, thr))
                pos = None
        else:
            h, p, i = grid[ref]
            if pos is None and p > level and i < n - 1:
                thr = threshold_at(h) if threshold_at else None
                pos = {"t": h, "p": p, "peak": p, "dd": 0.0, "thr": thr}
    if pos is not None:
        trades.append(RefTrade(pos["t"], m[-1], pos["p"], prices[-1], pos["dd"], "forced", pos["thr"]))
    return trades


def reference_artificial(times, prices, period=20, l=20):
    """All fixed-horizon pseudo-trades as (entry_minute, exit_minute, entry_price, exit_price, drawdown)."""
    m = minutes_of(times)
    prices = [float(p) for p in prices]
    grid = _ref_grid_fast(m, prices)
    out = []
    for k in range(period - 1, len(grid) - l):
        level = math.fsum(g[1] for g in grid[k - period + 1:k + 1]) / period
        h, p, i = grid[k]
        if p > level:
            h2, p2, i2 = grid[k + l]
            peak, dd = p, 0.0
            for q in prices[i:i2 + 1]:
                peak = max(peak, q)
                dd = max(dd, (peak - q) / peak)
            out.append((h, h2, p, p2, dd))
    return out
