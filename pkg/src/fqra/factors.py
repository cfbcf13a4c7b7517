"""Cross-sectional standardization, PCA factors and BIC choice of their number."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KTooLargeError, NonFiniteInputError
from .quantreg import pinball, qr_fit

EPS_FLOOR = 1e-8


@dataclass(frozen=True)
class StandardizedPanel:
    """Row-wise z-scores of a ``T x N`` forecast matrix.

    ``sigma`` is the floored standard deviation actually used for scaling;
    ``sigma_raw`` keeps the unfloored value and ``degenerate`` marks rows
    where the floor was applied.
    """

    values: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    sigma_raw: np.ndarray
    degenerate: np.ndarray
    eps_floor: float = EPS_FLOOR

    def standardize(self, y: np.ndarray, rows: slice | np.ndarray = slice(None)) -> np.ndarray:
        """Apply the row statistics to a target aligned with ``rows``."""
        return (np.asarray(y, dtype=float) - self.mu[rows]) / self.sigma[rows]

    def back_transform(self, p: np.ndarray, rows: slice | np.ndarray = slice(None)) -> np.ndarray:
        """``p * sigma + mu``; ``p`` may carry trailing quantile axes."""
        p = np.asarray(p, dtype=float)
        extra = (None,) * (p.ndim - 1)
        return p * self.sigma[rows][(slice(None),) + extra] + self.mu[rows][(slice(None),) + extra]


def standardize_cross_section(matrix, eps_floor: float = EPS_FLOOR) -> StandardizedPanel:
    """Z-score each row over the window-length dimension (sample SD, ``n - 1``)."""
    M = np.asarray(getattr(matrix, "values", matrix), dtype=float)
    if M.ndim != 2 or M.shape[1] < 2:
        raise ValueError("standardization needs a T x N matrix with N >= 2")
    mu = M.mean(axis=1)
    sigma_raw = M.std(axis=1, ddof=1)
    degenerate = sigma_raw < eps_floor
    sigma = np.where(degenerate, eps_floor, sigma_raw)
    values = (M - mu[:, None]) / sigma[:, None]
    return StandardizedPanel(values, mu, sigma, sigma_raw, degenerate, eps_floor)


@dataclass(frozen=True)
class FactorSet:
    """``factors`` is ``T x K`` with ``factors.T @ factors = T * I``; ``loadings`` is ``N x K``."""

    factors: np.ndarray
    loadings: np.ndarray
    eigenvalues: np.ndarray
    route: str

    @property
    def K(self) -> int:
        return self.factors.shape[1]

    def reconstruct(self) -> np.ndarray:
        return self.factors @ self.loadings.T

    def leading(self, k: int) -> "FactorSet":
        return FactorSet(self.factors[:, :k], self.loadings[:, :k], self.eigenvalues[:k], self.route)


def numerical_rank(matrix) -> int:
    M = np.asarray(matrix, dtype=float)
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int((sv > sv[0] * max(M.shape) * np.finfo(float).eps).sum())


def extract_factors(matrix, K: int, route: str = "auto") -> FactorSet:
    """Principal-component factors by least squares.

    ``route="time"`` takes the top-``K`` eigenvectors of the ``T x T`` matrix
    ``M M'`` scaled by ``sqrt(T)``.  ``route="cross"`` takes the eigenvectors
    ``V`` of the ``N x N`` matrix ``M'M`` and maps them to the same
    normalisation through ``M V / sqrt(lambda)``.  ``auto`` picks the smaller
    eigenproblem.  Loadings are the least-squares coefficients ``M'F / T``.
    Each factor is signed so that its loadings sum to a non-negative value.
    """
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2:
        raise ValueError("factor extraction needs a 2-d matrix")
    if not np.isfinite(M).all():
        raise NonFiniteInputError("panel contains non-finite values")
    T, N = M.shape
    if K < 1 or K > min(T, N):
        raise KTooLargeError(f"K={K} outside 1..min(T, N)={min(T, N)}")
    if route == "auto":
        route = "cross" if N < T else "time"
    if route == "time":
        lam, vec = np.linalg.eigh(M @ M.T)
        order = np.argsort(lam)[::-1][:K]
        lam, U = lam[order], vec[:, order]
    elif route == "cross":
        lam, vec = np.linalg.eigh(M.T @ M)
        order = np.argsort(lam)[::-1][:K]
        lam, V = lam[order], vec[:, order]
        tiny = lam <= max(T, N) * np.finfo(float).eps * max(lam[0], 0.0)
        if np.any(tiny):
            # directions outside the column space are undefined through M V
            return extract_factors(M, K, route="time")
        U = M @ V / np.sqrt(lam)
    else:
        raise ValueError(f"unknown route {route!r}")
    lam = np.maximum(lam, 0.0)
    F = np.sqrt(T) * U
    L = M.T @ F / T
    flip = L.sum(axis=0) < 0
    F[:, flip] *= -1.0
    L[:, flip] *= -1.0
    return FactorSet(F, L, lam, route)


def _bic(n: int, loss: float, k: int) -> float:
    if loss <= 0.0:
        return -np.inf
    return n * np.log(loss / n) + (k + 1) * np.log(n)


def bic_curve(factors: np.ndarray, y, criterion_mode: str = "linear") -> np.ndarray:
    """BIC for k = 1..factors.shape[1] using the first ``len(y)`` rows of ``factors``."""
    y = np.asarray(y, dtype=float)
    n = y.size
    F = np.asarray(factors, dtype=float)[:n]
    out = np.empty(F.shape[1])
    for k in range(1, F.shape[1] + 1):
        X = np.column_stack([np.ones(n), F[:, :k]])
        if criterion_mode == "linear":
            coef = np.linalg.lstsq(X, y, rcond=None)[0]
            loss = float(((y - X @ coef) ** 2).sum())
        elif criterion_mode == "median-pinball":
            model = qr_fit(F[:, :k], y, 0.5)
            loss = float(pinball(0.5, model.intercept + F[:, :k] @ model.weights, y).sum())
        else:
            raise ValueError(f"unknown criterion_mode {criterion_mode!r}")
        out[k - 1] = _bic(n, loss, k)
    return out


def select_k_bic(matrix, y, k_max: int = 6, criterion_mode: str = "linear",
                 factor_set: FactorSet | None = None) -> int:
    """Number of factors minimising BIC; ties go to the smaller k.

    Factors come from the whole matrix; the regression uses its first
    ``len(y)`` rows (the forecast day's rows have no target yet).
    """
    M = np.asarray(matrix, dtype=float)
    if k_max < 1 or k_max > min(M.shape):
        raise KTooLargeError(f"k_max={k_max} outside 1..{min(M.shape)}")
    y = np.asarray(y, dtype=float)
    if y.size >= M.shape[0] + 1:
        raise ValueError("target is longer than the panel")
    if factor_set is None or factor_set.K < k_max:
        factor_set = extract_factors(M, k_max)
    curve = bic_curve(factor_set.factors[:, :k_max], y, criterion_mode)
    return int(np.argmin(curve)) + 1
