import numpy as np
import pytest

from bessbench.data import ExogenousSeries, make_series

START = np.datetime64("2021-01-04T00:00:00")  # a Monday, midnight
HOUR = np.timedelta64(1, "h")


def series_of(prices, demands, start=START) -> ExogenousSeries:
    """Build an hourly series from raw price/demand lists."""
    prices = np.asarray(prices, dtype=np.float64)
    demands = np.asarray(demands, dtype=np.float64)
    assert len(prices) == len(demands)
    timestamps = start + np.arange(len(prices)) * HOUR
    return make_series(timestamps, prices, demands)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
