"""Linear quantile regression.

The fitter is a Frisch-Newton primal-dual interior point method applied to
the bounded dual of the pinball-loss linear program, vectorised over
quantile levels that share one design.  A final vertex step solves the
interpolation conditions at the ``p`` observations closest to the fitted
hyperplane and keeps that solution when it lowers the loss.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateDesignError, DimensionMismatchError, NonConvergenceError

PERCENTILES = np.round(np.arange(1, 100) / 100.0, 2)


def pinball(q, forecast, actual):
    """Pinball loss ``q * (y - f)`` above the forecast, ``(1 - q) * (f - y)`` below."""
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile order must lie strictly inside (0, 1)")
    diff = np.asarray(actual, dtype=float) - np.asarray(forecast, dtype=float)
    loss = np.where(diff < 0, (q - 1.0) * diff, q * diff)
    return float(loss) if loss.ndim == 0 else loss


@dataclass(frozen=True)
class QuantileModel:
    q: float
    intercept: float
    weights: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie strictly inside (0, 1)")
        w = np.array(self.weights, dtype=float).ravel()
        if not (np.isfinite(w).all() and np.isfinite(self.intercept)):
            raise ValueError("non-finite quantile regression coefficients")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.weights])

    def predict(self, x) -> np.ndarray | float:
        return qr_predict(self, x)


def qr_predict(model: QuantileModel, x):
    x = np.asarray(x, dtype=float)
    k = model.weights.size
    if x.ndim == 0 and k == 1:
        x = x.reshape(1)
    if x.shape[-1:] != (k,) and not (k == 0 and x.ndim >= 1 and x.shape[-1] == 0):
        raise DimensionMismatchError(f"model has {k} weights, input has shape {x.shape}")
    out = model.intercept + x @ model.weights
    return float(out) if np.ndim(out) == 0 else out


def _step_bound(v: np.ndarray, dv: np.ndarray) -> np.ndarray:
    """Largest step in [0, inf) keeping ``v + step * dv`` non-negative, per row."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dv < 0, -v / dv, np.inf)
    return ratio.min(axis=1)


def _solve(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        pass
    # one singular system must not degrade the others in the batch
    out = np.empty_like(rhs)
    for i in range(M.shape[0]):
        try:
            out[i] = np.linalg.solve(M[i], rhs[i])
        except np.linalg.LinAlgError:
            out[i] = np.linalg.pinv(M[i]) @ rhs[i]
    return out


def _frisch_newton(
    X: np.ndarray, y: np.ndarray, qs: np.ndarray, tol: float, max_iter: int, beta: float = 0.99995
) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``min sum pinball`` for each q in ``qs``; returns coefficients ``(Q, p)`` and iterations."""
    n, p = X.shape
    Q = qs.size
    A = X.T  # (p, n)
    c = -y
    b = (1.0 - qs)[:, None] * A.sum(axis=1)[None, :]  # (Q, p)
    u = np.ones(n)
    x = np.repeat((1.0 - qs)[:, None], n, axis=1)
    s = u - x
    y0 = np.linalg.lstsq(X, c, rcond=None)[0]
    dual = np.repeat(y0[None, :], Q, axis=0)
    r = c - dual @ A
    # equal shifts keep z - w = c - A'y while making both slacks interior
    shift = 1e-3 * max(1.0, np.abs(c).max())
    z = np.maximum(r, 0.0) + shift
    w = z - r
    scale = max(1.0, np.abs(c).sum())
    its = np.zeros(Q, dtype=int)

    def gap_of(idx):
        return x[idx] @ c - np.einsum("ij,ij->i", dual[idx], b[idx]) + w[idx].sum(axis=1)

    active = np.flatnonzero(gap_of(np.arange(Q)) > tol * scale)
    it = 0
    while active.size and it < max_iter:
        it += 1
        its[active] += 1
        xa, sa, za, wa, ya = x[active], s[active], z[active], w[active], dual[active]
        qd = 1.0 / (za / xa + wa / sa)
        ra = za - wa
        AQA = (A[None, :, :] * qd[:, None, :]) @ A.T[None, :, :]
        rhs = (qd * ra) @ A.T
        dy = _solve(AQA, rhs)
        dx = qd * (dy @ A - ra)
        ds = -dx
        dz = -za * (dx / xa + 1.0)
        dw = -wa * (ds / sa + 1.0)
        fp = np.minimum(beta * np.minimum(_step_bound(xa, dx), _step_bound(sa, ds)), 1.0)
        fd = np.minimum(beta * np.minimum(_step_bound(wa, dw), _step_bound(za, dz)), 1.0)
        corr = np.minimum(fp, fd) < 1.0
        if corr.any():
            k = corr
            mu = (za[k] * xa[k]).sum(axis=1) + (wa[k] * sa[k]).sum(axis=1)
            g = ((za[k] + fd[k, None] * dz[k]) * (xa[k] + fp[k, None] * dx[k])).sum(axis=1) + (
                (wa[k] + fd[k, None] * dw[k]) * (sa[k] + fp[k, None] * ds[k])
            ).sum(axis=1)
            mu = mu * (g / mu) ** 3 / (2.0 * n)
            dxdz = dx[k] * dz[k]
            dsdw = ds[k] * dw[k]
            xinv = 1.0 / xa[k]
            sinv = 1.0 / sa[k]
            xi = mu[:, None] * (xinv - sinv)
            rhs_c = ((qd[k] * (ra[k] + dxdz - dsdw - xi))) @ A.T
            dyc = _solve(AQA[k], rhs_c)
            dxc = qd[k] * (dyc @ A + xi - ra[k] - dxdz + dsdw)
            dsc = -dxc
            dzc = mu[:, None] * xinv - za[k] - xinv * za[k] * dxc - dxdz
            dwc = mu[:, None] * sinv - wa[k] - sinv * wa[k] * dsc - dsdw
            dy[k], dx[k], ds[k], dz[k], dw[k] = dyc, dxc, dsc, dzc, dwc
            fp[k] = np.minimum(beta * np.minimum(_step_bound(xa[k], dxc), _step_bound(sa[k], dsc)), 1.0)
            fd[k] = np.minimum(beta * np.minimum(_step_bound(wa[k], dwc), _step_bound(za[k], dzc)), 1.0)
        x[active] = xa + fp[:, None] * dx
        s[active] = sa + fp[:, None] * ds
        dual[active] = ya + fd[:, None] * dy
        w[active] = wa + fd[:, None] * dw
        z[active] = za + fd[:, None] * dz
        active = active[gap_of(active) > tol * scale]
    if active.size:
        raise NonConvergenceError(f"interior point did not converge in {max_iter} iterations")
    return -dual, its


def _vertex_polish(X: np.ndarray, y: np.ndarray, q: float, coef: np.ndarray) -> np.ndarray:
    """Try the basic solution through the ``p`` points nearest the fit."""
    p = X.shape[1]
    resid = y - X @ coef
    best = coef
    best_loss = pinball(q, X @ coef, y).sum()
    order = np.argsort(np.abs(resid), kind="stable")
    basis = order[:p]
    XB = X[basis]
    if np.linalg.matrix_rank(XB) < p:
        return best
    cand = np.linalg.solve(XB, y[basis])
    loss = pinball(q, X @ cand, y).sum()
    if loss <= best_loss:
        return cand
    return best


def _check_design(X: np.ndarray, y: np.ndarray) -> None:
    n, p = X.shape
    if y.shape != (n,):
        raise DimensionMismatchError(f"X has {n} rows, y has shape {y.shape}")
    if n <= p:
        raise DimensionMismatchError(f"quantile regression needs more rows ({n}) than coefficients ({p})")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("quantile regression inputs must be finite")
    if np.linalg.matrix_rank(X) < p:
        raise DegenerateDesignError("design matrix (with intercept) is rank deficient")


def qr_fit_many(X, y, qs: Sequence[float], tol: float = 1e-9, max_iter: int = 500,
                polish: bool = True) -> list[QuantileModel]:
    """Fit one quantile model per entry of ``qs`` on regressors ``X`` (intercept added)."""
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.size:
        raise DimensionMismatchError(f"X has {X.shape[0]} rows, y has {y.size}")
    qs = np.asarray(qs, dtype=float).ravel()
    if np.any((qs <= 0) | (qs >= 1)):
        raise ValueError("quantile orders must lie strictly inside (0, 1)")
    design = np.column_stack([np.ones(y.size), X])
    _check_design(design, y)

    # centre and scale the response; the pinball argmin is equivariant under both
    loc = float(np.median(y))
    spread = float(np.abs(y - loc).max())
    if spread == 0.0:
        return [QuantileModel(float(q), loc, np.zeros(X.shape[1])) for q in qs]
    col_scale = np.abs(design).max(axis=0)
    col_scale[col_scale == 0] = 1.0
    Xs = design / col_scale
    ys = (y - loc) / spread
    coefs, _ = _frisch_newton(Xs, ys, qs, tol=tol, max_iter=max_iter)
    models = []
    for q, coef in zip(qs, coefs):
        if polish:
            coef = _vertex_polish(Xs, ys, q, coef)
        coef = coef * spread / col_scale
        coef[0] += loc
        models.append(QuantileModel(float(q), float(coef[0]), coef[1:]))
    return models


def qr_fit(X, y, q: float, **kwargs) -> QuantileModel:
    """Linear quantile regression of ``y`` on ``X`` plus an intercept."""
    return qr_fit_many(X, y, [q], **kwargs)[0]


def fit_percentile_grid(X, y, qs: Sequence[float] = PERCENTILES, **kwargs) -> list[QuantileModel]:
    """Independent fits for q = 0.01, ..., 0.99, ordered by q."""
    order = np.argsort(qs, kind="stable")
    qs = np.asarray(qs, dtype=float)[order]
    return qr_fit_many(X, y, qs, **kwargs)


def total_pinball(model: QuantileModel, X, y) -> float:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return float(pinball(model.q, qr_predict(model, X), y).sum())


def independent_columns(X, tol: float | None = None) -> np.ndarray:
    """Indices of a maximal linearly independent subset of ``X``'s columns, intercept included.

    Columns are scanned left to right; one is kept when it is not (numerically)
    spanned by the intercept and the columns kept before it.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    keep: list[int] = []
    basis = np.ones((n, 1)) / np.sqrt(n)
    for j in range(X.shape[1]):
        col = X[:, j]
        norm = np.linalg.norm(col)
        if norm == 0.0:
            continue
        resid = col - basis @ (basis.T @ col)
        rnorm = np.linalg.norm(resid)
        if rnorm > (tol or 1e-9) * max(norm, 1.0):
            keep.append(j)
            basis = np.column_stack([basis, resid / rnorm])
    return np.array(keep, dtype=int)
