"""Synthetic hourly market whose day-ahead price follows the ARX structure exactly.

Day-ahead prices are linear in the day-ahead regressor set plus Gaussian
noise, so the conditional distribution of every price given the past is
``N(mean, noise_scale**2)`` and its quantiles are available in closed form.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .point import MAX_LAG, ModelSpec, _design_block
from .timeseries import HOURS, HourlyPanel

MIN_SYNTHETIC_DAYS = 120

# weekday intercepts Mon..Sun, then DA lags 1/2/7, min, max, last, load, solar, wind, EUA, gas
DEFAULT_COEFFICIENTS = (
    8.0, 8.5, 8.5, 8.0, 7.5, 3.0, 1.0,
    0.35, 0.10, 0.10, 0.05, 0.05, 0.05,
    0.30, -0.30, -0.40, 0.30, 0.50,
)


@dataclass(frozen=True)
class SyntheticSpec:
    n_days: int = 720
    start_date: dt.date = dt.date(2019, 1, 7)
    noise_scale: float = 3.0
    coefficients: tuple = DEFAULT_COEFFICIENTS
    id3_noise: float = 2.0
    partial_noise: float = 1.0
    no_trade_share: float = 0.1

    def __post_init__(self):
        if self.n_days < MIN_SYNTHETIC_DAYS:
            raise ValueError(f"synthetic panels need at least {MIN_SYNTHETIC_DAYS} days")
        if len(self.coefficients) != 18:
            raise ValueError("coefficients must follow the 18 day-ahead regressors")

    @property
    def model(self) -> ModelSpec:
        return ModelSpec("DA", include_solar=True)


def _exogenous(spec: SyntheticSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    n = spec.n_days
    hours = np.arange(HOURS)
    days = np.arange(n)
    weekday = (spec.start_date.weekday() + days) % 7

    daily_shape = 1.0 + 0.25 * np.sin(2 * np.pi * (hours - 8) / 24.0)
    seasonal = 1.0 + 0.15 * np.cos(2 * np.pi * days / 365.25)
    weekend = np.where(weekday >= 5, 0.85, 1.0)
    load = 60.0 * seasonal[:, None] * weekend[:, None] * daily_shape[None, :]
    load = load * np.exp(0.03 * rng.standard_normal((n, HOURS)))

    wind_level = np.empty(n)
    wind_level[0] = 12.0
    shocks = rng.standard_normal(n)
    for d in range(1, n):
        wind_level[d] = 12.0 + 0.8 * (wind_level[d - 1] - 12.0) + 4.0 * shocks[d]
    wind = np.clip(wind_level[:, None] + 2.0 * rng.standard_normal((n, HOURS)), 0.0, None)

    sun = np.clip(np.sin(np.pi * (hours - 5) / 14.0), 0.0, None)
    sun[(hours + 1 < 6) | (hours + 1 > 20)] = 0.0
    cloud = rng.uniform(0.3, 1.0, n)
    solar = 20.0 * (1.0 - 0.3 * np.cos(2 * np.pi * days / 365.25))[:, None] * cloud[:, None] * sun[None, :]

    def commodity(mean: float, scale: float) -> np.ndarray:
        level = np.empty(n)
        level[0] = mean
        eps = rng.standard_normal(n)
        for d in range(1, n):
            if weekday[d] >= 5:  # no weekend quotes: carry Friday's close
                level[d] = level[d - 1]
            else:
                level[d] = mean + 0.97 * (level[d - 1] - mean) + scale * eps[d]
        return np.repeat(level[:, None], HOURS, axis=1)

    return {
        "load_fc": load,
        "wind_fc": wind,
        "solar_fc": solar,
        "gas_price": commodity(25.0, 0.6),
        "eua_price": commodity(20.0, 0.4),
    }


def _conditional_mean(data: dict[str, np.ndarray], weekdays: np.ndarray, d: int,
                      coefficients: np.ndarray, model: ModelSpec) -> np.ndarray:
    block = _design_block(data, weekdays, np.array([d]), model)[0]  # (24, 18)
    return block @ coefficients


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec(), seed: int = 0) -> HourlyPanel:
    rng = np.random.default_rng(seed)
    data = _exogenous(spec, rng)
    n = spec.n_days
    weekdays = (spec.start_date.weekday() + np.arange(n)) % 7
    coef = np.asarray(spec.coefficients, dtype=float)
    model = spec.model

    da = np.empty((n, HOURS))
    data["da_price"] = da
    base = coef[:7].mean() / (1.0 - coef[7:13].sum())
    da[:MAX_LAG] = base + 40.0 + spec.noise_scale * rng.standard_normal((MAX_LAG, HOURS))
    noise = rng.standard_normal((n, HOURS))
    for d in range(MAX_LAG, n):
        da[d] = _conditional_mean(data, weekdays, d, coef, model) + spec.noise_scale * noise[d]

    id3 = da + spec.id3_noise * rng.standard_normal((n, HOURS))
    partial = id3 + spec.partial_noise * rng.standard_normal((n, HOURS))
    no_trade = rng.random((n, HOURS)) < spec.no_trade_share
    partial = np.where(no_trade, da, partial)

    series = {k: v.ravel() for k, v in data.items()}
    series["id3_price"] = id3.ravel()
    series["id_partial"] = partial.ravel()
    return HourlyPanel(spec.start_date, n, series)


def true_quantiles(panel: HourlyPanel, spec: SyntheticSpec, days, qs) -> np.ndarray:
    """Exact conditional day-ahead quantiles, shape ``(len(days), 24, len(qs))``."""
    data = {k: panel.matrix(k) for k in spec.model.required_series}
    weekdays = (panel.start_date.weekday() + np.arange(panel.n_days)) % 7
    coef = np.asarray(spec.coefficients, dtype=float)
    z = ndtri(np.asarray(qs, dtype=float))
    out = []
    for d in days:
        mean = _conditional_mean(data, weekdays, int(d), coef, spec.model)
        out.append(mean[:, None] + spec.noise_scale * z[None, :])
    return np.array(out)
