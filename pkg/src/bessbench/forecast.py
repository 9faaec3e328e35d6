"""Hourly price/demand forecasters feeding the receding-horizon controller.

Two fitted kinds are provided: ``seasonal_naive`` (repeat the value from one
season earlier; the reference model) and ``ar_linear`` (per-channel linear
autoregression on lags 1, 2, 24, 168 plus sine/cosine hour and a weekend
flag, fit by least squares on normalized values; the default).  Multi-step
prediction is recursive: each prediction is clipped at zero and fed back
into later lags.  ``OracleForecaster`` returns the true future values and is
what "exact model" MPC runs on.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import ExogenousSeries, _weekdays_of
from .errors import (
    InsufficientHistoryError,
    NotFittedError,
    ValidationError,
)

SCHEMA_TAG = "bessbench-forecaster-v1"
_RIDGE_LAMBDA = 1e-6


def _hour_features(hour: int) -> tuple[float, float]:
    angle = 2.0 * math.pi * hour / 24.0
    return math.sin(angle), math.cos(angle)


def _roll_calendar(hour: int, weekday: int, k: int) -> tuple[int, bool]:
    """Calendar state k hours after (hour, weekday)."""
    total = weekday * 24 + hour + k
    return total % 24, (total // 24) % 7 >= 5


@dataclass(frozen=True)
class ForecastHorizon:
    """Forecast path from an origin step: entry 0 is the observed value at
    the origin, entries 1..T are predictions."""

    prices_hat: np.ndarray
    demands_hat: np.ndarray
    origin_t: int


@dataclass
class Forecaster:
    """Base fitted forecaster; see subclasses for the actual models."""

    season_length: int = 24
    fitted: bool = False
    kind: str = ""

    @property
    def min_history(self) -> int:
        """Past rows needed before a prediction can be formed."""
        raise NotImplementedError

    def predict_path(
        self,
        prices_hist: np.ndarray,
        demands_hist: np.ndarray,
        hour: int,
        weekday: int,
        horizon: int,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Predict both channels for leads 0..horizon.

        ``hour``/``weekday`` describe the last history row; lead-0 entries
        are the observed last values.
        """
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass
class SeasonalNaiveForecaster(Forecaster):
    """Repeat the value observed one season (default one day) earlier."""

    def __post_init__(self) -> None:
        self.kind = "seasonal_naive"

    @property
    def min_history(self) -> int:
        return self.season_length

    def _predict_channel(self, hist: np.ndarray, horizon: int) -> np.ndarray:
        out = np.empty(horizon + 1)
        out[0] = hist[-1]
        n = len(hist)
        for k in range(1, horizon + 1):
            idx = n - 1 + k - self.season_length
            out[k] = hist[idx] if idx < n else out[k - self.season_length]
        return out

    def predict_path(self, prices_hist, demands_hist, hour, weekday, horizon):
        if not self.fitted:
            raise NotFittedError("forecaster used before fit")
        if len(prices_hist) < self.min_history:
            raise InsufficientHistoryError(
                f"need {self.min_history} past rows, have {len(prices_hist)}"
            )
        return (
            self._predict_channel(np.asarray(prices_hist, dtype=np.float64), horizon),
            self._predict_channel(np.asarray(demands_hist, dtype=np.float64), horizon),
        )

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_TAG,
            "kind": self.kind,
            "season_length": self.season_length,
        }


@dataclass
class ChannelModel:
    """Per-channel linear model on normalized values."""

    mean: float
    sd: float  # > 0; constant channels store 1.0
    theta: np.ndarray  # [intercept, one per lag..., sin_h, cos_h, weekend]

    def to_dict(self) -> dict:
        return {"mean": self.mean, "sd": self.sd, "theta": [float(v) for v in self.theta]}


@dataclass
class ArLinearForecaster(Forecaster):
    """Linear autoregression with calendar features, one model per channel."""

    lags: tuple[int, ...] = (1, 2, 24, 168)
    price_model: Optional[ChannelModel] = None
    demand_model: Optional[ChannelModel] = None

    def __post_init__(self) -> None:
        self.kind = "ar_linear"
        if not self.lags or any(l < 1 for l in self.lags):
            raise ValidationError(f"lags must be positive, got {self.lags}")

    @property
    def min_history(self) -> int:
        return max(self.lags)

    def _predict_channel(
        self, model: ChannelModel, hist: np.ndarray, hour: int, weekday: int, horizon: int
    ) -> np.ndarray:
        max_lag = max(self.lags)
        out = np.empty(horizon + 1)
        out[0] = hist[-1]
        # z-buffer: positions 0..max_lag-1 hold history, then predictions
        buf = np.empty(max_lag + horizon)
        buf[:max_lag] = (hist[-max_lag:] - model.mean) / model.sd
        n_lags = len(self.lags)
        feats = np.empty(1 + n_lags + 3)
        feats[0] = 1.0
        for k in range(1, horizon + 1):
            for i, lag in enumerate(self.lags):
                feats[1 + i] = buf[max_lag + k - 1 - lag]
            h_k, wk_k = _roll_calendar(hour, weekday, k)
            feats[1 + n_lags], feats[2 + n_lags] = _hour_features(h_k)
            feats[3 + n_lags] = 1.0 if wk_k else 0.0
            z_pred = float(feats @ model.theta)
            clipped = max(0.0, model.mean + model.sd * z_pred)
            out[k] = clipped
            buf[max_lag + k - 1] = (clipped - model.mean) / model.sd
        return out

    def predict_path(self, prices_hist, demands_hist, hour, weekday, horizon):
        if not self.fitted or self.price_model is None or self.demand_model is None:
            raise NotFittedError("forecaster used before fit")
        if len(prices_hist) < self.min_history:
            raise InsufficientHistoryError(
                f"need {self.min_history} past rows, have {len(prices_hist)}"
            )
        prices_hist = np.asarray(prices_hist, dtype=np.float64)
        demands_hist = np.asarray(demands_hist, dtype=np.float64)
        return (
            self._predict_channel(self.price_model, prices_hist, hour, weekday, horizon),
            self._predict_channel(self.demand_model, demands_hist, hour, weekday, horizon),
        )

    def to_dict(self) -> dict:
        assert self.price_model is not None and self.demand_model is not None
        return {
            "schema": SCHEMA_TAG,
            "kind": self.kind,
            "season_length": self.season_length,
            "lags": list(self.lags),
            "price": self.price_model.to_dict(),
            "demand": self.demand_model.to_dict(),
        }


class OracleForecaster(Forecaster):
    """Returns the true future values of a bound series; zero error by construction."""

    def __init__(self, series: ExogenousSeries, season_length: int = 24) -> None:
        super().__init__(season_length=season_length, fitted=True, kind="oracle")
        self.series = series

    @property
    def min_history(self) -> int:
        return 0

    def true_slice(self, origin_t: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
        if origin_t < 0 or origin_t + horizon >= len(self.series):
            raise ValidationError(
                f"oracle window [{origin_t}, {origin_t + horizon}] outside series "
                f"of length {len(self.series)}"
            )
        sl = slice(origin_t, origin_t + horizon + 1)
        return self.series.prices[sl].copy(), self.series.demands[sl].copy()

    def to_dict(self) -> dict:
        raise ValidationError("oracle forecaster is not serializable")


def _fit_channel(
    values: np.ndarray,
    hours: np.ndarray,
    weekend: np.ndarray,
    lags: tuple[int, ...],
) -> ChannelModel:
    mean = float(np.mean(values))
    sd = float(np.std(values))
    if sd < 1e-12:
        sd = 1.0  # constant channel: normalization becomes a pure shift
    z = (values - mean) / sd
    max_lag = max(lags)
    idx = np.arange(max_lag, len(values))
    cols = [np.ones(len(idx))]
    cols.extend(z[idx - lag] for lag in lags)
    angle = 2.0 * np.pi * hours[idx] / 24.0
    cols.append(np.sin(angle))
    cols.append(np.cos(angle))
    cols.append(weekend[idx].astype(np.float64))
    x = np.column_stack(cols)
    y = z[idx]
    theta, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < x.shape[1]:
        warnings.warn(
            "singular normal equations in forecaster fit; using ridge fallback",
            RuntimeWarning,
            stacklevel=3,
        )
        gram = x.T @ x + _RIDGE_LAMBDA * np.eye(x.shape[1])
        theta = np.linalg.solve(gram, x.T @ y)
    return ChannelModel(mean=mean, sd=sd, theta=theta)


def fit_forecaster(
    history: ExogenousSeries, kind: str = "ar_linear", season_length: int = 24
) -> Forecaster:
    """Fit a forecaster of the given kind on a training series.

    History requirements: two seasons plus the deepest feature lag, i.e.
    3 seasons for ``seasonal_naive`` and ``2 * season_length + 168`` rows
    (9 days at hourly resolution) for ``ar_linear``.
    """
    if season_length < 1:
        raise ValidationError(f"season_length must be >= 1, got {season_length}")
    if kind == "seasonal_naive":
        need = 2 * season_length + season_length
        if len(history) < need:
            raise InsufficientHistoryError(
                f"seasonal_naive needs >= {need} rows, got {len(history)}"
            )
        return SeasonalNaiveForecaster(season_length=season_length, fitted=True)
    if kind == "ar_linear":
        model = ArLinearForecaster(season_length=season_length)
        need = 2 * season_length + model.min_history
        if len(history) < need:
            raise InsufficientHistoryError(
                f"ar_linear needs >= {need} rows, got {len(history)}"
            )
        model.price_model = _fit_channel(
            history.prices, history.hours, history.weekend_flags, model.lags
        )
        model.demand_model = _fit_channel(
            history.demands, history.hours, history.weekend_flags, model.lags
        )
        model.fitted = True
        return model
    raise ValidationError(f"unknown forecaster kind {kind!r}")


def predict_horizon(
    model: Forecaster,
    series: ExogenousSeries,
    origin_t: int,
    horizon: int,
    warmup: Optional[ExogenousSeries] = None,
) -> ForecastHorizon:
    """Forecast leads 0..horizon from series row ``origin_t``.

    Only rows up to ``origin_t`` of the series are read (plus the optional
    warmup history prepended before row 0); future calendar features are
    derived arithmetically, so no future exogenous data leaks in.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    if origin_t < 0 or origin_t >= len(series):
        raise ValidationError(f"origin_t {origin_t} outside series of length {len(series)}")
    if not model.fitted:
        raise NotFittedError("forecaster used before fit")

    if isinstance(model, OracleForecaster):
        prices_hat, demands_hat = model.true_slice(origin_t, horizon)
        return ForecastHorizon(prices_hat=prices_hat, demands_hat=demands_hat, origin_t=origin_t)

    if warmup is not None:
        prices_hist = np.concatenate([warmup.prices, series.prices[: origin_t + 1]])
        demands_hist = np.concatenate([warmup.demands, series.demands[: origin_t + 1]])
    else:
        prices_hist = series.prices[: origin_t + 1]
        demands_hist = series.demands[: origin_t + 1]
    hour = int(series.hours[origin_t])
    weekday = int(_weekdays_of(series.timestamps[origin_t : origin_t + 1])[0])
    prices_hat, demands_hat = model.predict_path(
        prices_hist, demands_hist, hour, weekday, horizon
    )
    return ForecastHorizon(prices_hat=prices_hat, demands_hat=demands_hat, origin_t=origin_t)


@dataclass(frozen=True)
class ForecastErrors:
    """MAE/RMSE per channel per lead time (lead 0 is the observed value)."""

    price_mae_by_lead: np.ndarray
    price_rmse_by_lead: np.ndarray
    demand_mae_by_lead: np.ndarray
    demand_rmse_by_lead: np.ndarray
    n_origins: int

    @property
    def price_rmse(self) -> float:
        """RMSE over all (origin, lead >= 1) pairs."""
        return float(np.sqrt(np.mean(self.price_rmse_by_lead[1:] ** 2)))

    @property
    def demand_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.demand_rmse_by_lead[1:] ** 2)))


def forecast_error(
    model: Forecaster,
    test: ExogenousSeries,
    horizon: int,
    warmup: Optional[ExogenousSeries] = None,
) -> ForecastErrors:
    """Average multi-step errors over every valid origin of a test series."""
    warm_len = len(warmup) if warmup is not None else 0
    origin_start = max(0, model.min_history - warm_len - 1)
    origin_stop = len(test) - 1 - horizon  # inclusive
    if origin_stop < origin_start:
        raise ValidationError(
            f"no valid forecast origins: series length {len(test)}, horizon {horizon}, "
            f"history requirement {model.min_history}"
        )
    n_leads = horizon + 1
    abs_p = np.zeros(n_leads)
    sq_p = np.zeros(n_leads)
    abs_d = np.zeros(n_leads)
    sq_d = np.zeros(n_leads)
    n = 0
    for t in range(origin_start, origin_stop + 1):
        fh = predict_horizon(model, test, t, horizon, warmup=warmup)
        err_p = fh.prices_hat - test.prices[t : t + horizon + 1]
        err_d = fh.demands_hat - test.demands[t : t + horizon + 1]
        abs_p += np.abs(err_p)
        sq_p += err_p**2
        abs_d += np.abs(err_d)
        sq_d += err_d**2
        n += 1
    return ForecastErrors(
        price_mae_by_lead=abs_p / n,
        price_rmse_by_lead=np.sqrt(sq_p / n),
        demand_mae_by_lead=abs_d / n,
        demand_rmse_by_lead=np.sqrt(sq_d / n),
        n_origins=n,
    )


def save_forecaster(model: Forecaster, path: str) -> None:
    """Write a fitted forecaster as a schema-tagged JSON file."""
    if not model.fitted:
        raise NotFittedError("cannot save an unfitted forecaster")
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_forecaster(path: str) -> Forecaster:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema") != SCHEMA_TAG:
        raise ValidationError(f"{path}: unknown forecaster schema {payload.get('schema')!r}")
    kind = payload["kind"]
    if kind == "seasonal_naive":
        return SeasonalNaiveForecaster(season_length=payload["season_length"], fitted=True)
    if kind == "ar_linear":
        model = ArLinearForecaster(
            season_length=payload["season_length"], lags=tuple(payload["lags"])
        )
        model.price_model = ChannelModel(
            mean=payload["price"]["mean"],
            sd=payload["price"]["sd"],
            theta=np.array(payload["price"]["theta"]),
        )
        model.demand_model = ChannelModel(
            mean=payload["demand"]["mean"],
            sd=payload["demand"]["sd"],
            theta=np.array(payload["demand"]["theta"]),
        )
        model.fitted = True
        return model
    raise ValidationError(f"{path}: unknown forecaster kind {kind!r}")
