import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ddstop.market_data import BarSeries, generate_gbm  # noqa: E402

DATA = Path(__file__).parent / "data"


def minute_series(prices, start="2016-01-04T14:00", asset_id="TEST", gaps=None):
    """Consecutive minute bars from ``start``; ``gaps`` is a set of offsets to drop."""
    prices = np.asarray(prices, dtype=float)
    offsets = np.arange(len(prices))
    if gaps:
        keep = np.array([o not in gaps for o in offsets])
        offsets, prices = offsets[keep], prices[keep]
    times = np.datetime64(start, "m") + offsets.astype("timedelta64[m]")
    return BarSeries(asset_id, times, prices)


@pytest.fixture(scope="session")
def gbm30():
    return generate_gbm(42, p0=100.0, mu=0.05, sigma=0.3, n_minutes=30 * 390)


@pytest.fixture(scope="session")
def gbm60():
    return generate_gbm(42, p0=100.0, mu=0.05, sigma=0.3, n_minutes=60 * 390)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
