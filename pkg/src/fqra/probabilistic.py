"""Probabilistic price forecasts: HS, CP, QRA, QRM and the factor QR family.

For each forecast day the previous ``window`` days (182 by default) form the
calibration sample.  Prices and point forecasts are mapped to the N-PIT
domain with a map fitted on that sample's realized prices, every method
works in that domain, and the 99 quantiles are mapped back pointwise.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import DimensionMismatchError, InsufficientHistoryError, LevelNotOnGridError
from .factors import (
    FactorSet,
    StandardizedPanel,
    extract_factors,
    numerical_rank,
    select_k_bic,
    standardize_cross_section,
)
from .point import PAPER_AVERAGING_TAUS, ForecastPanel
from .quantreg import PERCENTILES, QuantileModel, independent_columns, qr_fit_many
from .timeseries import HOURS, npit_fit

METHODS = ("HS", "CP", "QRA", "QRM", "FQRA", "FQRM", "sFQRA", "sFQRM")
FACTOR_METHODS = ("FQRA", "FQRM", "sFQRA", "sFQRM")
COVERAGES = np.round(np.arange(0.50, 0.981, 0.02), 2)
CALIBRATION_DAYS = 182


def empirical_quantile(sample, probs, axis: int = 0):
    """Linear interpolation of order statistics placed at ``(k - 0.5) / n``."""
    return np.quantile(np.asarray(sample, dtype=float), probs, axis=axis, method="hazen")


def rearrange_quantiles(raw) -> np.ndarray:
    """Sort quantile forecasts along the last axis."""
    return np.sort(np.asarray(raw, dtype=float), axis=-1)


def _check_errors(errors: np.ndarray, lookback: int | None) -> np.ndarray:
    errors = np.asarray(errors, dtype=float).ravel()
    if lookback is not None and errors.size < lookback:
        raise InsufficientHistoryError(f"{errors.size} errors available, {lookback} required")
    if errors.size == 0:
        raise InsufficientHistoryError("no errors to build an interval from")
    return errors


def hs_interval(avg_fc: float, errors, alpha: float, lookback: int | None = None) -> tuple[float, float]:
    """Point forecast plus the empirical ``alpha/2`` and ``1 - alpha/2`` error quantiles."""
    errors = _check_errors(errors, lookback)
    lo, hi = empirical_quantile(errors, [alpha / 2.0, 1.0 - alpha / 2.0])
    return avg_fc + lo, avg_fc + hi


def cp_interval(avg_fc: float, errors, alpha: float, lookback: int | None = None) -> tuple[float, float]:
    """Symmetric band whose half-width is the ``1 - alpha`` quantile of absolute errors."""
    errors = _check_errors(errors, lookback)
    lam = float(empirical_quantile(np.abs(errors), 1.0 - alpha))
    return avg_fc - lam, avg_fc + lam


def hs_quantiles(avg_fc, errors, qs=PERCENTILES) -> np.ndarray:
    """Quantile forecasts ``avg_fc + gamma_q``; trailing axis indexes ``qs``."""
    gamma = empirical_quantile(errors, qs)
    return np.asarray(avg_fc, dtype=float)[..., None] + gamma


def cp_quantiles(avg_fc, errors, qs=PERCENTILES) -> np.ndarray:
    """Quantile ``q`` of the conformal band is the bound of the ``|2q - 1|`` interval."""
    qs = np.asarray(qs, dtype=float)
    lam = empirical_quantile(np.abs(np.asarray(errors, dtype=float)), np.abs(2 * qs - 1))
    return np.asarray(avg_fc, dtype=float)[..., None] + np.sign(qs - 0.5) * lam


@dataclass(frozen=True)
class QuantileFit:
    """Quantile regressions sharing one design; ``columns`` are the regressors kept."""

    models: list[QuantileModel]
    columns: np.ndarray
    predictions: np.ndarray

    def objective(self, X, y) -> np.ndarray:
        """Total in-sample pinball loss per quantile."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X = X[:, self.columns]
        y = np.asarray(y, dtype=float)
        out = []
        for m in self.models:
            diff = y - (m.intercept + X @ m.weights)
            out.append(np.where(diff < 0, (m.q - 1) * diff, m.q * diff).sum())
        return np.array(out)


def fit_quantiles(X, y, X_new, qs=PERCENTILES) -> QuantileFit:
    """QR of ``y`` on the linearly independent columns of ``X``; predictions at ``X_new``."""
    X = np.asarray(X, dtype=float)
    X_new = np.asarray(X_new, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X_new.ndim == 1:
        X_new = X_new[:, None] if X.shape[1] == 1 else X_new[None, :]
    if X_new.shape[1] != X.shape[1]:
        raise DimensionMismatchError(f"new regressors have {X_new.shape[1]} columns, expected {X.shape[1]}")
    cols = independent_columns(X)
    models = qr_fit_many(X[:, cols], y, qs)
    W = np.column_stack([m.weights for m in models])  # (k, Q)
    b = np.array([m.intercept for m in models])
    pred = b[None, :] + X_new[:, cols] @ W
    return QuantileFit(models, cols, pred)


def qra_forecast(six_forecasts, prices, six_new, qs=PERCENTILES) -> QuantileFit:
    """Quantile regression on the individual window forecasts."""
    return fit_quantiles(six_forecasts, prices, six_new, qs)


def qrm_forecast(avg_fc, prices, avg_new, qs=PERCENTILES) -> QuantileFit:
    """Quantile regression on the averaged forecast alone."""
    avg_fc = np.asarray(avg_fc, dtype=float).ravel()
    return fit_quantiles(avg_fc[:, None], prices, np.asarray(avg_new, dtype=float).reshape(-1, 1), qs)


@dataclass(frozen=True)
class FactorQuantileFit:
    """One factor-QR day: quantiles for the forecast rows plus the pieces that produced them."""

    quantiles: np.ndarray  # (rows_new, Q) in the target's original units
    K: int
    factors: FactorSet | None
    qr: QuantileFit
    regressors: np.ndarray  # in-sample QR regressors
    target: np.ndarray  # in-sample QR target (standardized when applicable)
    standardized: StandardizedPanel | None


def fqr_forecast(
    matrix,
    prices,
    mode: str = "FQRA",
    standardize: bool = False,
    k_max: int = 6,
    qs=PERCENTILES,
    criterion_mode: str | None = None,
    eps_floor: float = 1e-8,
) -> FactorQuantileFit:
    """Factor quantile regression for the rows of ``matrix`` beyond ``len(prices)``.

    ``matrix`` is the ``T x N`` forecast panel of the calibration days plus
    the forecast day; ``prices`` holds the realized values for its first
    rows.  FQRA regresses quantiles on the factors directly; FQRM first fits
    OLS on the factors and regresses quantiles on the fitted values.
    """
    if mode not in ("FQRA", "FQRM"):
        raise ValueError(f"mode must be FQRA or FQRM, got {mode!r}")
    M = np.asarray(getattr(matrix, "values", matrix), dtype=float)
    y = np.asarray(prices, dtype=float).ravel()
    n = y.size
    if n >= M.shape[0]:
        raise InsufficientHistoryError("panel has no rows beyond the calibration targets")
    if criterion_mode is None:
        criterion_mode = "median-pinball" if mode == "FQRA" else "linear"

    sp = None
    Z = M
    target = y
    if standardize:
        sp = standardize_cross_section(M, eps_floor)
        Z = sp.values
        target = sp.standardize(y, slice(0, n))

    k_cap = min(k_max, numerical_rank(Z))
    if k_cap >= 1:
        fs = extract_factors(Z, k_cap)
        K = select_k_bic(Z, target, k_cap, criterion_mode, factor_set=fs)
        F = fs.factors[:, :K]
    else:
        fs, K = None, 0
        F = np.zeros((M.shape[0], 0))

    if mode == "FQRA":
        regs = F
    else:
        design = np.column_stack([np.ones(M.shape[0]), F])
        beta = np.linalg.lstsq(design[:n], target, rcond=None)[0]
        regs = (design @ beta)[:, None]
    qfit = fit_quantiles(regs[:n], target, regs[n:], qs)
    quantiles = qfit.predictions
    if sp is not None:
        quantiles = sp.back_transform(quantiles, slice(n, None))
    return FactorQuantileFit(quantiles, K, fs, qfit, regs[:n], target, sp)


@dataclass(frozen=True)
class QuantileSurface:
    """Quantile forecasts per (day, hour, q) in the N-PIT domain and in price units."""

    method: str
    days: np.ndarray
    quantiles: np.ndarray
    values_npit: np.ndarray  # (n_days, 24, Q)
    values: np.ndarray  # (n_days, 24, Q)
    start_date: dt.date
    k_used: np.ndarray | None = None
    window: int = CALIBRATION_DAYS

    def rearranged(self) -> "QuantileSurface":
        return QuantileSurface(
            self.method, self.days, self.quantiles,
            rearrange_quantiles(self.values_npit), rearrange_quantiles(self.values),
            self.start_date, self.k_used, self.window,
        )

    def at(self, q: float, domain: str = "price") -> np.ndarray:
        j = _grid_position(self.quantiles, q)
        src = self.values if domain == "price" else self.values_npit
        return src[..., j]

    def to_frame(self) -> pd.DataFrame:
        nd, nh, nq = self.values.shape
        dates = [(self.start_date + dt.timedelta(days=int(d))).isoformat() for d in self.days]
        return pd.DataFrame({
            "date": np.repeat(dates, nh * nq),
            "hour": np.tile(np.repeat(np.arange(1, nh + 1), nq), nd),
            "method": self.method,
            "q": np.tile(self.quantiles, nd * nh),
            "value": self.values.ravel(),
            "value_npit": self.values_npit.ravel(),
        })

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        _write_csv(self.to_frame(), path, header_comment)

    @classmethod
    def from_csv(cls, path: str | Path, start_date: dt.date | None = None) -> "QuantileSurface":
        frame = pd.read_csv(path, comment="#")
        dates = pd.to_datetime(frame["date"]).dt.date
        uniq = sorted(set(dates))
        start = start_date or uniq[0]
        qs = np.sort(frame["q"].unique())
        nd, nq = len(uniq), qs.size
        frame = frame.assign(_d=dates).sort_values(["_d", "hour", "q"])
        shape = (nd, HOURS, nq)
        days = np.array([(d - start).days for d in uniq])
        return cls(
            str(frame["method"].iloc[0]), days, qs,
            frame["value_npit"].to_numpy().reshape(shape), frame["value"].to_numpy().reshape(shape),
            start,
        )


def _grid_position(grid: np.ndarray, q: float) -> int:
    j = int(np.argmin(np.abs(grid - q)))
    if abs(grid[j] - q) > 1e-9:
        raise LevelNotOnGridError(f"quantile {q} is not on the surface grid")
    return j


def _write_csv(frame: pd.DataFrame, path: str | Path, header_comment: str | None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        frame.to_csv(fh, index=False, float_format="%.17g")


@dataclass(frozen=True)
class IntervalSet:
    """Lower/upper bounds per (day, hour, coverage level)."""

    method: str
    days: np.ndarray
    coverages: np.ndarray
    lower: np.ndarray  # (n_days, 24, L)
    upper: np.ndarray
    start_date: dt.date

    def level(self, coverage: float) -> tuple[np.ndarray, np.ndarray]:
        j = _grid_position(self.coverages, coverage)
        return self.lower[..., j], self.upper[..., j]

    def to_frame(self) -> pd.DataFrame:
        nd, nh, nl = self.lower.shape
        dates = [(self.start_date + dt.timedelta(days=int(d))).isoformat() for d in self.days]
        return pd.DataFrame({
            "date": np.repeat(dates, nh * nl),
            "hour": np.tile(np.repeat(np.arange(1, nh + 1), nl), nd),
            "method": self.method,
            "level": np.tile(self.coverages, nd * nh),
            "lower": self.lower.ravel(),
            "upper": self.upper.ravel(),
        })

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        _write_csv(self.to_frame(), path, header_comment)

    @classmethod
    def from_csv(cls, path: str | Path, start_date: dt.date | None = None) -> "IntervalSet":
        frame = pd.read_csv(path, comment="#")
        dates = pd.to_datetime(frame["date"]).dt.date
        uniq = sorted(set(dates))
        start = start_date or uniq[0]
        levels = np.sort(frame["level"].unique())
        frame = frame.assign(_d=dates).sort_values(["_d", "hour", "level"])
        shape = (len(uniq), HOURS, levels.size)
        return cls(
            str(frame["method"].iloc[0]), np.array([(d - start).days for d in uniq]), levels,
            frame["lower"].to_numpy().reshape(shape), frame["upper"].to_numpy().reshape(shape), start,
        )


def assemble_intervals(surface: QuantileSurface, coverages: Iterable[float] = COVERAGES) -> IntervalSet:
    """Prediction intervals ``[q_{alpha/2}, q_{1-alpha/2}]`` in price units."""
    coverages = np.asarray(sorted(coverages), dtype=float)
    lo_idx, hi_idx = [], []
    for cov in coverages:
        alpha = 1.0 - cov
        lo_idx.append(_grid_position(surface.quantiles, round(alpha / 2.0, 10)))
        hi_idx.append(_grid_position(surface.quantiles, round(1.0 - alpha / 2.0, 10)))
    values = rearrange_quantiles(surface.values)
    return IntervalSet(
        surface.method, surface.days, coverages,
        values[..., lo_idx], values[..., hi_idx], surface.start_date,
    )


def _identity(x):
    return np.asarray(x, dtype=float)


def forecast_day(
    method: str,
    cube: np.ndarray,
    prices_hist: np.ndarray,
    tau_index: np.ndarray,
    avg_taus: Sequence[int] = PAPER_AVERAGING_TAUS,
    k_max: int = 6,
    qs=PERCENTILES,
    npit: bool = True,
) -> tuple[np.ndarray, np.ndarray, int | None]:
    """Quantiles for one forecast day.

    ``cube`` is ``(W + 1, 24, N)`` point forecasts in price units for the
    ``W`` calibration days followed by the forecast day; ``prices_hist`` is
    the ``(W, 24)`` realized prices.  Returns N-PIT-domain and price-unit
    quantiles of shape ``(24, Q)`` and the number of factors used.
    """
    W = prices_hist.shape[0]
    if cube.shape[0] != W + 1:
        raise DimensionMismatchError("forecast cube must cover the calibration days plus the forecast day")
    if npit:
        fitted = npit_fit(prices_hist.ravel())
        fwd, back = fitted.transform, fitted.inverse
    else:
        fwd = back = _identity
    pos = [int(np.searchsorted(tau_index, t)) for t in avg_taus]
    if any(p >= tau_index.size or tau_index[p] != t for p, t in zip(pos, avg_taus)):
        raise InsufficientHistoryError(f"averaging windows {list(avg_taus)} are not all in the panel")

    P = fwd(prices_hist)
    avg = fwd(cube[:, :, pos].mean(axis=2))
    k_used = None
    qs = np.asarray(qs, dtype=float)
    out = np.empty((HOURS, qs.size))

    if method in ("HS", "CP"):
        errors = P - avg[:W]
        build = hs_quantiles if method == "HS" else cp_quantiles
        for h in range(HOURS):
            out[h] = build(avg[W, h], errors[:, h], qs)
    elif method == "QRA":
        six = fwd(cube[:, :, pos])
        for h in range(HOURS):
            out[h] = qra_forecast(six[:W, h], P[:, h], six[W, h][None, :], qs).predictions[0]
    elif method == "QRM":
        for h in range(HOURS):
            out[h] = qrm_forecast(avg[:W, h], P[:, h], avg[W, h], qs).predictions[0]
    elif method in FACTOR_METHODS:
        panel = fwd(cube).reshape((W + 1) * HOURS, -1)
        fit = fqr_forecast(
            panel, P.ravel(), mode=method.lstrip("s"), standardize=method.startswith("s"),
            k_max=k_max, qs=qs,
        )
        out[:] = fit.quantiles
        k_used = fit.K
    else:
        raise ValueError(f"unknown method {method!r}")
    out = rearrange_quantiles(out)
    return out, rearrange_quantiles(back(out)), k_used


def forecast_surface(
    method: str,
    panel: ForecastPanel,
    prices: np.ndarray,
    eval_days: Iterable[int],
    window: int = CALIBRATION_DAYS,
    avg_taus: Sequence[int] = PAPER_AVERAGING_TAUS,
    k_max: int = 6,
    qs=PERCENTILES,
    npit: bool = True,
) -> QuantileSurface:
    """Run ``method`` for every day in ``eval_days``.

    ``prices`` is the ``(n_days, 24)`` realized price matrix indexed by the
    same day numbers as ``panel.days``.
    """
    prices = np.asarray(prices, dtype=float)
    days = np.array(sorted(set(int(d) for d in eval_days)), dtype=int)
    qs = np.asarray(qs, dtype=float)
    vals_npit = np.empty((days.size, HOURS, qs.size))
    vals = np.empty_like(vals_npit)
    ks = np.zeros(days.size, dtype=int)
    for i, d in enumerate(days):
        span = np.arange(d - window, d + 1)
        if span[0] < 0:
            raise InsufficientHistoryError(f"day {d} has fewer than {window} calibration days")
        cube = panel.select_days(span).cube()
        vals_npit[i], vals[i], k = forecast_day(
            method, cube, prices[d - window : d], panel.tau_index, avg_taus, k_max, qs, npit
        )
        ks[i] = -1 if k is None else k
    k_used = ks if method in FACTOR_METHODS else None
    return QuantileSurface(method, days, qs, vals_npit, vals, panel.start_date, k_used, window)
