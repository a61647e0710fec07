"""scikit-learn compatible wrappers around the threshold calibration.

``X`` holds per-trade maximum drawdowns (shape ``(n,)`` or ``(n, 1)``) and
``y`` the matching trade returns. ``predict`` flags drawdowns at which the
calibrated trailing stop would have fired.

>>> cal = DrawdownStopCalibrator(n_bins=2).fit([0.0025, 0.011, 0.019], [-0.01, 0.03, 0.02])
>>> round(cal.threshold_, 4)
0.019
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .drawdown_stats import assign_bins, bin_arrays, calibrate_threshold, default_bin_count
from .errors import InvalidParameter


def _check_drawdowns(X):
    X = check_array(X, ensure_2d=False, dtype=np.float64)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise InvalidParameter(f"expected a single drawdown column, got {X.shape[1]}")
        X = X[:, 0]
    if np.any(X < 0):
        raise InvalidParameter("drawdowns must be >= 0")
    return X


def _check_Xy(X, y):
    X = _check_drawdowns(X)
    y = check_array(y, ensure_2d=False, dtype=np.float64)
    check_consistent_length(X, y)
    return X, y


class DrawdownStopCalibrator(BaseEstimator):
    """Choose a trailing-stop threshold from a corpus of completed trades.

    Parameters
    ----------
    n_bins : int or None, default=None
        Number of equal-width drawdown bins; ``None`` uses ``ceil(sqrt(n_trades))``.

    Attributes
    ----------
    report_ : ThresholdReport
    threshold_ : float
    bin_edges_ : ndarray of shape (n_bins,)
        Right edges of the bins.
    """

    def __init__(self, n_bins=None):
        self.n_bins = n_bins

    def _fit_arrays(self, X, y):
        n = default_bin_count(len(X)) if self.n_bins is None else self.n_bins
        self.report_ = calibrate_threshold(bin_arrays(X, y, n))
        self.threshold_ = self.report_.threshold
        self.bin_edges_ = self.report_.bins.upper_edges
        self.n_features_in_ = 1
        return self

    def fit(self, X, y):
        X, y = _check_Xy(X, y)
        return self._fit_arrays(X, y)

    def transform(self, X):
        """Zero-based histogram bin of each drawdown (values beyond the range clip to the last bin)."""
        check_is_fitted(self, "report_")
        return assign_bins(_check_drawdowns(X), self.bin_edges_)

    def predict(self, X):
        """1 where the stop fires (drawdown >= threshold), else 0."""
        check_is_fitted(self, "threshold_")
        return (_check_drawdowns(X) >= self.threshold_).astype(int)


class RollingStopCalibrator(DrawdownStopCalibrator):
    """Calibrate on only the ``window`` most recent trades.

    Rows of ``X``/``y`` must be ordered oldest first (by exit time).
    """

    def __init__(self, window=250, n_bins=None):
        self.window = window
        self.n_bins = n_bins

    def fit(self, X, y):
        X, y = _check_Xy(X, y)
        if self.window < 1:
            raise InvalidParameter("window must be >= 1")
        self._fit_arrays(X[-self.window:], y[-self.window:])
        self.underfull_ = len(X) < self.window
        return self
