"""Hourly price/demand series: loading, synthesis, and splitting.

The synthetic generator stands in for proprietary market data.  It keeps
the structure the controllers exploit: a daily price sinusoid, a daily
demand sinusoid with weekend scaling, and seeded Gaussian noise truncated
at zero.  An optional shift block rescales/reshapes the demand only,
leaving prices bit-identical for the same seed, which isolates the
distribution-shift scenario used in the robustness benchmark.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional

import numpy as np

from .errors import CsvParseError, DataAlignmentError, ValidationError

_HOUR = np.timedelta64(1, "h")
# generation starts on a Monday so weekday/weekend patterns are phase-stable
_START = np.datetime64("2021-01-04T00:00:00")


@dataclass(frozen=True, eq=False)
class ExogenousSeries:
    """Aligned hourly price and demand traces with calendar features.

    ``hours`` and ``weekend_flags`` are derived from the timestamps; all
    arrays have equal length >= 2 and timestamps are strictly hourly.
    """

    timestamps: np.ndarray  # datetime64[s]
    prices: np.ndarray  # $/kWh
    demands: np.ndarray  # kWh per step
    hours: np.ndarray  # int, 0..23
    weekend_flags: np.ndarray  # bool

    def __post_init__(self) -> None:
        n = len(self.timestamps)
        if n < 2:
            raise ValidationError(f"series needs at least 2 rows, got {n}")
        for name in ("prices", "demands", "hours", "weekend_flags"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} length != timestamps length")
        if not np.all(np.isfinite(self.prices)) or not np.all(np.isfinite(self.demands)):
            raise ValidationError("non-finite price or demand")
        if np.any(self.prices < 0):
            raise ValidationError("negative price")
        if np.any(self.demands < 0):
            raise ValidationError("negative demand")
        diffs = np.diff(self.timestamps)
        if not np.all(diffs == _HOUR):
            bad = int(np.argmax(diffs != _HOUR))
            raise DataAlignmentError(
                f"timestamps not strictly hourly around row {bad} "
                f"({self.timestamps[bad]} -> {self.timestamps[bad + 1]})"
            )
        if not np.array_equal(self.hours, _hours_of(self.timestamps)):
            raise ValidationError("hour fields inconsistent with timestamps")
        if not np.array_equal(self.weekend_flags, _weekends_of(self.timestamps)):
            raise ValidationError("weekend flags inconsistent with timestamps")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def weekdays(self) -> np.ndarray:
        """Day of week per row, Monday=0."""
        return _weekdays_of(self.timestamps)

    def slice(self, start: int, stop: int) -> "ExogenousSeries":
        """Contiguous sub-series [start, stop)."""
        return ExogenousSeries(
            timestamps=self.timestamps[start:stop].copy(),
            prices=self.prices[start:stop].copy(),
            demands=self.demands[start:stop].copy(),
            hours=self.hours[start:stop].copy(),
            weekend_flags=self.weekend_flags[start:stop].copy(),
        )


def _hours_of(timestamps: np.ndarray) -> np.ndarray:
    return (timestamps.astype("datetime64[h]").astype(np.int64) % 24).astype(np.int64)


def _weekdays_of(timestamps: np.ndarray) -> np.ndarray:
    days = timestamps.astype("datetime64[D]").astype(np.int64)
    return (days + 3) % 7  # 1970-01-01 was a Thursday


def _weekends_of(timestamps: np.ndarray) -> np.ndarray:
    return _weekdays_of(timestamps) >= 5


def make_series(timestamps: np.ndarray, prices: np.ndarray, demands: np.ndarray) -> ExogenousSeries:
    """Assemble a series, deriving the calendar columns from the timestamps."""
    ts = timestamps.astype("datetime64[s]")
    return ExogenousSeries(
        timestamps=ts,
        prices=np.asarray(prices, dtype=np.float64),
        demands=np.asarray(demands, dtype=np.float64),
        hours=_hours_of(ts),
        weekend_flags=_weekends_of(ts),
    )


def series_equal(a: ExogenousSeries, b: ExogenousSeries) -> bool:
    """Exact (bitwise) equality of two series."""
    return (
        np.array_equal(a.timestamps, b.timestamps)
        and np.array_equal(a.prices, b.prices)
        and np.array_equal(a.demands, b.demands)
    )


@dataclass(frozen=True)
class ShiftConfig:
    """Demand-only distribution shift.

    ``demand_mean_scale`` multiplies every demand value; ``demand_shape_skew``
    applies the power transform d -> m * (d/m)**skew about the post-scale
    mean m, which reshapes the distribution while roughly preserving its mean.
    """

    demand_mean_scale: float = 1.0
    demand_shape_skew: float = 1.0

    def __post_init__(self) -> None:
        if self.demand_mean_scale <= 0 or self.demand_shape_skew <= 0:
            raise ValidationError("shift factors must be positive")


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the synthetic hourly price/demand generator."""

    seed: int = 0
    days: int = 30
    price_base: float = 0.12
    price_daily_amp: float = 0.09
    price_noise_sd: float = 0.006
    demand_base: float = 5.0
    demand_daily_amp: float = 2.0
    demand_weekend_scale: float = 1.25
    demand_noise_sd: float = 0.4
    shift: Optional[ShiftConfig] = None

    def __post_init__(self) -> None:
        if self.days < 1:
            raise ValidationError(f"days must be >= 1, got {self.days}")
        if self.price_base <= 0 or self.demand_base <= 0:
            raise ValidationError("base levels must be positive")
        if not (0 <= self.price_daily_amp < self.price_base):
            raise ValidationError("price amplitude must be in [0, price_base)")
        if not (0 <= self.demand_daily_amp < self.demand_base):
            raise ValidationError("demand amplitude must be in [0, demand_base)")
        if self.price_noise_sd < 0 or self.demand_noise_sd < 0:
            raise ValidationError("noise sd must be non-negative")
        if self.demand_weekend_scale <= 0:
            raise ValidationError("weekend scale must be positive")


# daily price shape: sharp evening peak over a deep night valley
_PRICE_PEAK_HOUR = 19.0
_PRICE_PEAK_SHARPNESS = 6.75
_PRICE_PEAK_SCALE = 3.4
_PRICE_VALLEY_HOUR = 5.0
_PRICE_VALLEY_SHARPNESS = 6.5


def daily_price_profile(hours: np.ndarray) -> np.ndarray:
    """Zero-mean daily price shape, normalized so the deepest trough is -1.

    A few-hour evening spike (about 17:00-21:00) over a deep night valley,
    with the rest of the day sitting mildly below the daily average - the
    shape of real-time tariffs in peak-driven systems.  The shape is what
    separates the controllers: a threshold-at-the-mean policy buys through
    the whole sub-average midday plateau, arrives at the cheap night hours
    already full, and has nothing left to learn about peak timing, while
    hour-aware controllers buy the valley and sell the spike.
    """
    h = np.arange(24)
    raw = _PRICE_PEAK_SCALE * np.exp(
        _PRICE_PEAK_SHARPNESS * np.cos(2 * np.pi * (h - _PRICE_PEAK_HOUR) / 24.0)
    ) - np.exp(
        _PRICE_VALLEY_SHARPNESS * np.cos(2 * np.pi * (h - _PRICE_VALLEY_HOUR) / 24.0)
    )
    raw -= raw.mean()
    profile = raw / abs(raw.min())
    return profile[np.asarray(hours, dtype=np.int64)]


def generate(config: GeneratorConfig) -> ExogenousSeries:
    """Synthesize a seeded hourly series.

    Prices: sharp-peaked daily profile (see :func:`daily_price_profile`)
    plus Gaussian noise, floored at 0.  Demand: daily sinusoid peaking at
    20:00, scaled up on weekends, plus Gaussian noise, floored at 0, then
    shifted if a shift block is present.  Price noise is drawn before
    demand noise from a single seeded generator, so a shift never perturbs
    the price trace.
    """
    n = config.days * 24
    rng = np.random.default_rng(config.seed)
    timestamps = _START + np.arange(n) * _HOUR
    hours = _hours_of(timestamps)
    weekend = _weekends_of(timestamps)

    price_noise = rng.normal(0.0, config.price_noise_sd, n) if config.price_noise_sd > 0 else np.zeros(n)
    demand_noise = rng.normal(0.0, config.demand_noise_sd, n) if config.demand_noise_sd > 0 else np.zeros(n)

    prices = config.price_base + config.price_daily_amp * daily_price_profile(hours)
    prices = np.maximum(0.0, prices + price_noise)

    demands = config.demand_base + config.demand_daily_amp * np.sin(
        2 * np.pi * (hours - 14) / 24.0
    )
    demands = demands * np.where(weekend, config.demand_weekend_scale, 1.0)
    demands = np.maximum(0.0, demands + demand_noise)

    if config.shift is not None:
        demands = demands * config.shift.demand_mean_scale
        if config.shift.demand_shape_skew != 1.0:
            m = float(np.mean(demands))
            if m > 0:
                demands = m * (demands / m) ** config.shift.demand_shape_skew

    return make_series(timestamps, prices, demands)


def split(series: ExogenousSeries, train_frac: float) -> tuple[ExogenousSeries, ExogenousSeries]:
    """Chronological split into contiguous train and test parts."""
    if not (0.0 < train_frac < 1.0):
        raise ValidationError(f"train_frac must be in (0, 1), got {train_frac}")
    n = len(series)
    n_train = int(round(n * train_frac))
    if n_train < 25 or n - n_train < 25:
        raise ValidationError(
            f"both parts need >= 25 steps, split of {n} at {train_frac} "
            f"gives ({n_train}, {n - n_train})"
        )
    return series.slice(0, n_train), series.slice(n_train, n)


def concat(first: ExogenousSeries, second: ExogenousSeries) -> ExogenousSeries:
    """Concatenate two contiguous series (second must start one hour after first ends)."""
    if second.timestamps[0] - first.timestamps[-1] != _HOUR:
        raise DataAlignmentError("series are not contiguous")
    return make_series(
        np.concatenate([first.timestamps, second.timestamps]),
        np.concatenate([first.prices, second.prices]),
        np.concatenate([first.demands, second.demands]),
    )


def load_csv(path: str) -> ExogenousSeries:
    """Parse a ``timestamp,price,demand`` CSV into a validated series.

    Timestamps must be ISO-8601 on exact hours; rows must be consecutive
    hours (a gap or duplicate raises :class:`DataAlignmentError`).
    """
    timestamps: list[np.datetime64] = []
    prices: list[float] = []
    demands: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file") from None
        if [h.strip() for h in header] != ["timestamp", "price", "demand"]:
            raise CsvParseError(f"{path}: line 1: expected header 'timestamp,price,demand'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise CsvParseError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                ts = datetime.fromisoformat(row[0].strip())
            except ValueError:
                raise CsvParseError(f"{path}: line {lineno}: bad timestamp {row[0]!r}") from None
            if ts.minute or ts.second or ts.microsecond or ts.tzinfo is not None:
                raise DataAlignmentError(
                    f"{path}: line {lineno}: timestamp {row[0]!r} is not on an exact naive hour"
                )
            try:
                price = float(row[1])
                demand = float(row[2])
            except ValueError:
                raise CsvParseError(f"{path}: line {lineno}: non-numeric value") from None
            if not (math.isfinite(price) and math.isfinite(demand)):
                raise ValidationError(f"{path}: line {lineno}: non-finite value")
            if price < 0 or demand < 0:
                raise ValidationError(f"{path}: line {lineno}: negative price or demand")
            timestamps.append(np.datetime64(ts))
            prices.append(price)
            demands.append(demand)
    if len(timestamps) < 2:
        raise ValidationError(f"{path}: series needs at least 2 rows, got {len(timestamps)}")
    return make_series(np.array(timestamps), np.array(prices), np.array(demands))


def write_csv(series: ExogenousSeries, path: str) -> None:
    """Write a series in the load_csv schema; floats use shortest round-trip form."""
    stamps = series.timestamps.astype("datetime64[s]").tolist()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "price", "demand"])
        for ts, price, demand in zip(stamps, series.prices, series.demands):
            writer.writerow([ts.isoformat(), repr(float(price)), repr(float(demand))])
