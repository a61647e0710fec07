"""Trailing stop-loss thresholds calibrated from per-trade drawdown distributions."""

from .analytics import (
    AggregateSummary,
    AssetComparison,
    CorrelationResult,
    aggregate,
    delta_nlv,
    error_analysis,
    pearson,
)
from .backtest import (
    BacktestConfig,
    BacktestResult,
    Mode,
    calibrate_as_of,
    run_backtest,
    run_r_method_calibrated,
    run_t_method_calibrated,
)
from .drawdown_stats import (
    DrawdownBins,
    ThresholdReport,
    bin_trades,
    calibrate_threshold,
    conditional_expectations,
    cumulative_expectation,
    default_bin_count,
)
from .estimators import DrawdownStopCalibrator, RollingStopCalibrator
from .market_data import (
    BarSeries,
    HourlyGrid,
    PlantedSpec,
    PriceBar,
    generate_gbm,
    generate_planted,
    load_csv,
    save_csv,
    to_hourly_grid,
)
from .rolling import RollingParams, calibrate_R, generate_artificial_trades
from .signals import (
    EquityCurve,
    SmaSeries,
    TradeRecord,
    compute_sma,
    measure_max_drawdown,
    run_signal_only,
)

__version__ = "0.1.0"
