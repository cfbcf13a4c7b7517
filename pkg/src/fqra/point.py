"""ARX point forecasts over rolling calibration windows.

Day-ahead (``DA``) and intraday (``IDA``) models are calibrated by OLS,
separately for each delivery hour, on every window length in ``tau_range``.
Each window refits its own N-PIT maps; forecasts are mapped back to price
units with the target's map so the columns of a :class:`ForecastPanel`
share one scale.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateSampleError,
    DimensionMismatchError,
    InsufficientHistoryError,
    UnknownTauError,
)
from .timeseries import HOURS, HourlyPanel, npit_fit

log = logging.getLogger(__name__)

PAPER_TAUS = tuple(range(56, 729))
DESK_TAUS = tuple(range(56, 201, 8))
PAPER_AVERAGING_TAUS = (56, 84, 112, 714, 721, 728)
DESK_AVERAGING_TAUS = (56, 64, 72, 184, 192, 200)
MAX_LAG = 7
PARTIAL_CUTOFF_HOUR = 10


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelSpec:
    market: str = "DA"
    include_solar: bool = True
    solar_hours: frozenset = frozenset(range(9, 18))

    def __post_init__(self):
        if self.market not in ("DA", "IDA"):
            raise ValueError(f"market must be 'DA' or 'IDA', got {self.market!r}")
        object.__setattr__(self, "solar_hours", frozenset(self.solar_hours))

    @property
    def target(self) -> str:
        return "da_price" if self.market == "DA" else "id3_price"

    @property
    def required_series(self) -> tuple[str, ...]:
        base = ["da_price", "load_fc", "wind_fc", "gas_price", "eua_price"]
        if self.market == "IDA":
            base += ["id3_price", "id_partial"]
        if self.include_solar:
            base.append("solar_fc")
        return tuple(base)

    def candidate_names(self) -> list[str]:
        """All regressors of the model, solar included, in column order."""
        dummies = [f"D{i}" for i in range(1, 8)]
        if self.market == "DA":
            rest = [
                "DA[d-1,h]", "DA[d-2,h]", "DA[d-7,h]",
                "DA[d-1,min]", "DA[d-1,max]", "DA[d-1,24]",
                "L[d,h]", "S[d,h]", "W[d,h]", "EUA[d-1]", "NG[d-1]",
            ]
        else:
            rest = [
                "ID3*[d-1,h]", "ID3[d-2,h]", "ID3[d-7,h]", "DA[d-1,h]",
                "DA[d-1,24]", "DA[d-1,min]", "DA[d-1,max]", "EUA[d-1]",
                "NG[d-1]", "L[d,h]", "S[d,h]", "W[d,h]",
            ]
        return dummies + rest

    def uses_solar(self, h: int) -> bool:
        return self.include_solar and h in self.solar_hours

    def feature_names(self, h: int) -> list[str]:
        names = self.candidate_names()
        if not self.uses_solar(h):
            names.remove("S[d,h]")
        return names


def _design_block(
    data: dict[str, np.ndarray], weekdays: np.ndarray, days: np.ndarray, spec: ModelSpec
) -> np.ndarray:
    """Regressors for ``days`` and all 24 hours, shape ``(len(days), 24, P)``.

    ``data`` maps series ids to ``(n_days, 24)`` arrays.  The solar column is
    always present and zeroed outside the solar hours, which leaves
    minimum-norm OLS fits and forecasts unchanged.
    """
    n = days.size
    da = data["da_price"]
    dummies = np.zeros((n, HOURS, 7))
    dummies[np.arange(n), :, weekdays[days]] = 1.0
    prev = days - 1
    da_prev = da[prev]
    per_day = lambda v: np.repeat(v[:, None], HOURS, axis=1)  # noqa: E731
    eua = data["eua_price"][prev, 0]
    ng = data["gas_price"][prev, 0]
    load = data["load_fc"][days]
    wind = data["wind_fc"][days]
    if spec.include_solar:
        solar = data["solar_fc"][days].copy()
        off = [h - 1 for h in range(1, HOURS + 1) if h not in spec.solar_hours]
        solar[:, off] = 0.0
    else:
        solar = np.zeros((n, HOURS))
    if spec.market == "DA":
        cols = [
            da_prev, da[days - 2], da[days - 7],
            per_day(da_prev.min(axis=1)), per_day(da_prev.max(axis=1)), per_day(da_prev[:, -1]),
            load, solar, wind, per_day(eua), per_day(ng),
        ]
    else:
        id3 = data["id3_price"]
        star = _id3_star(id3[prev], data["id_partial"][prev], da_prev)
        cols = [
            star, id3[days - 2], id3[days - 7], da_prev,
            per_day(da_prev[:, -1]), per_day(da_prev.min(axis=1)), per_day(da_prev.max(axis=1)),
            per_day(eua), per_day(ng), load, solar, wind,
        ]
    return np.concatenate([dummies, np.stack(cols, axis=-1)], axis=-1)


def _id3_star(id3_prev: np.ndarray, partial_prev: np.ndarray, da_prev: np.ndarray) -> np.ndarray:
    partial = np.where(np.isnan(partial_prev), da_prev, partial_prev)
    star = id3_prev.copy()
    late = np.arange(1, HOURS + 1) > PARTIAL_CUTOFF_HOUR
    star[..., late] = partial[..., late]
    return star


def _check_day(d: int, n_days: int) -> None:
    if d < MAX_LAG:
        raise InsufficientHistoryError(f"day {d} needs {MAX_LAG} days of lagged prices")
    if d >= n_days:
        raise InsufficientHistoryError(f"day {d} is beyond the panel ({n_days} days)")


def _weekdays(panel: HourlyPanel) -> np.ndarray:
    first = panel.start_date.weekday()
    return (first + np.arange(panel.n_days)) % 7


def build_design_row(panel: HourlyPanel, d: int, h: int, spec: ModelSpec) -> np.ndarray:
    """Regressor vector for day index ``d`` and hour ``h`` (1..24)."""
    _check_day(d, panel.n_days)
    data = {name: panel.matrix(name) for name in spec.required_series}
    block = _design_block(data, _weekdays(panel), np.array([d]), spec)
    row = block[0, h - 1]
    if not spec.uses_solar(h):
        row = np.delete(row, spec.candidate_names().index("S[d,h]"))
    return row


def build_design_row_da(panel: HourlyPanel, d: int, h: int, spec: ModelSpec | None = None) -> np.ndarray:
    spec = spec or ModelSpec("DA")
    if spec.market != "DA":
        raise ValueError("spec is not a day-ahead model")
    return build_design_row(panel, d, h, spec)


def build_design_row_ida(panel: HourlyPanel, d: int, h: int, spec: ModelSpec | None = None) -> np.ndarray:
    spec = spec or ModelSpec("IDA")
    if spec.market != "IDA":
        raise ValueError("spec is not an intraday model")
    return build_design_row(panel, d, h, spec)


class OlsFit(NamedTuple):
    coef: np.ndarray
    rank: int
    rank_deficient: bool


def ols_fit(X, y, warn: bool = True) -> OlsFit:
    """Least squares; the minimum-norm solution when ``X`` lacks full column rank."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DimensionMismatchError(f"X {X.shape} and y {y.shape} are not conformable")
    if X.shape[0] < X.shape[1]:
        raise DimensionMismatchError("OLS needs at least as many rows as columns")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("OLS inputs contain missing values")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    deficient = rank < X.shape[1]
    if deficient and warn:
        warnings.warn(
            f"design has rank {rank} < {X.shape[1]} columns; using the minimum-norm solution",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return OlsFit(coef, int(rank), bool(deficient))


@dataclass(frozen=True)
class ForecastPanel:
    """Point forecasts: row ``t = 24 * i + (h - 1)`` for ``days[i]``, one column per window."""

    values: np.ndarray
    days: np.ndarray
    tau_index: np.ndarray
    market: str
    start_date: dt.date
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        days = np.asarray(self.days, dtype=int)
        taus = np.asarray(self.tau_index, dtype=int)
        if values.shape != (HOURS * days.size, taus.size):
            raise DimensionMismatchError(
                f"values {values.shape} do not match {days.size} days x {taus.size} windows"
            )
        if np.any(np.diff(taus) <= 0):
            raise ValueError("tau_index must be strictly increasing")
        for name, arr in (("values", values), ("days", days), ("tau_index", taus)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def t_index(self) -> np.ndarray:
        """``(T, 2)`` array of (day index, hour 1..24)."""
        return np.column_stack([np.repeat(self.days, HOURS), np.tile(np.arange(1, HOURS + 1), self.days.size)])

    def column(self, tau: int) -> np.ndarray:
        pos = np.searchsorted(self.tau_index, tau)
        if pos >= self.N or self.tau_index[pos] != tau:
            raise UnknownTauError(f"window {tau} is not in the panel")
        return self.values[:, pos]

    def select_days(self, days: Sequence[int]) -> "ForecastPanel":
        days = np.asarray(days, dtype=int)
        pos = np.searchsorted(self.days, days)
        if np.any(pos >= self.days.size) or np.any(self.days[np.minimum(pos, self.days.size - 1)] != days):
            raise InsufficientHistoryError("requested days are not all in the forecast panel")
        rows = (pos[:, None] * HOURS + np.arange(HOURS)).ravel()
        return ForecastPanel(self.values[rows], days, self.tau_index, self.market, self.start_date, dict(self.meta))

    def cube(self) -> np.ndarray:
        """Values as ``(n_days, 24, N)``."""
        return self.values.reshape(self.days.size, HOURS, self.N)

    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        """Write ``<path>`` (CSV matrix) and ``<path>.json`` (index metadata)."""
        path = Path(path)
        header = ",".join(f"tau_{t}" for t in self.tau_index)
        if extra_meta and "config_hash" in extra_meta:
            header = f"# config_hash={extra_meta['config_hash']}\n{header}"
        np.savetxt(path, self.values, delimiter=",", header=header, comments="", fmt="%.17g")
        meta = dict(self.meta)
        meta.update(extra_meta or {})
        meta.update(
            market=self.market,
            start_date=self.start_date.isoformat(),
            days=self.days.tolist(),
            tau_index=self.tau_index.tolist(),
            hours_per_day=HOURS,
        )
        Path(f"{path}.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ForecastPanel":
        path = Path(path)
        meta = json.loads(Path(f"{path}.json").read_text())
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        values = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
        keep = {k: v for k, v in meta.items() if k not in ("market", "start_date", "days", "tau_index", "hours_per_day")}
        return cls(
            values,
            np.array(meta["days"], dtype=int),
            np.array(meta["tau_index"], dtype=int),
            meta["market"],
            dt.date.fromisoformat(meta["start_date"]),
            keep,
        )


def _min_norm_ls(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batched minimum-norm least squares via the normal equations.

    ``X`` is ``(B, n, P)`` and ``y`` is ``(B, n)``.  All-zero columns (the
    solar term outside its hours) get a unit diagonal and hence a zero
    coefficient; any other singular batch falls back to an eigen
    pseudo-inverse of ``X'X``.
    """
    G = np.transpose(X, (0, 2, 1)) @ X
    rhs = np.einsum("bnp,bn->bp", X, y)
    diag = np.einsum("bpp->bp", G)
    G = G + np.eye(G.shape[1])[None] * (diag == 0.0)[:, None, :]
    try:
        np.linalg.cholesky(G)
        return np.linalg.solve(G, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        lam, V = np.linalg.eigh(G)
        cutoff = lam[:, -1:] * G.shape[1] * 1e-13
        inv = np.where(lam > cutoff, 1.0 / np.where(lam > cutoff, lam, 1.0), 0.0)
        coords = np.transpose(V, (0, 2, 1)) @ rhs[..., None]
        return ((V * inv[:, None, :]) @ coords)[..., 0]


def _window_transform(
    mats: dict[str, np.ndarray], first: int, d: int, tau: int, npit: bool
) -> tuple[dict[str, np.ndarray], object]:
    """Transform days ``first..d`` with maps fitted on the ``tau`` days before ``d``.

    Returns the transformed day block and the target-agnostic map dictionary.
    """
    out, maps = {}, {}
    for name, mat in mats.items():
        block = mat[first : d + 1]
        if not npit:
            out[name] = block
            continue
        window = mat[d - tau : d]
        finite = window[np.isfinite(window)]
        try:
            fitted = npit_fit(finite)
        except DegenerateSampleError:
            # constant over the window: carries no information beyond the dummies
            out[name] = np.where(np.isnan(block), np.nan, 0.0)
            maps[name] = None
            continue
        out[name] = fitted.transform(block)
        maps[name] = fitted
    return out, maps


def _forecast_day(
    mats: dict[str, np.ndarray],
    weekdays: np.ndarray,
    d: int,
    taus: Sequence[int],
    spec: ModelSpec,
    npit: bool,
) -> np.ndarray:
    """Forecasts for the 24 hours of day ``d``, one column per window, in price units."""
    out = np.empty((HOURS, len(taus)))
    target = spec.target
    last_col = spec.candidate_names().index("DA[d-1,24]")
    for j, tau in enumerate(taus):
        first = d - tau - MAX_LAG
        data, maps = _window_transform(mats, first, d, tau, npit)
        local = np.arange(MAX_LAG, tau + MAX_LAG + 1)
        block = _design_block(data, weekdays[first:], local, spec)
        # at h = 24 the same-hour lag and the last-hour price coincide; one copy suffices
        block[:, HOURS - 1, last_col] = 0.0
        X = np.transpose(block[:-1], (1, 0, 2))  # (24, tau, P)
        y = data[target][MAX_LAG : MAX_LAG + tau].T  # (24, tau)
        pred = np.einsum("hp,hp->h", block[-1], _min_norm_ls(X, y))
        if npit:
            fitted = maps[target]
            pred = np.full(HOURS, mats[target][d - 1, 0]) if fitted is None else fitted.inverse(pred)
        out[:, j] = pred
    return out


def rolling_forecast(
    panel: HourlyPanel,
    spec: ModelSpec,
    tau_range: Iterable[int] = DESK_TAUS,
    eval_days: Iterable[int] | None = None,
    npit: bool = True,
) -> ForecastPanel:
    """Rolling-window ARX forecasts for every day in ``eval_days`` and window in ``tau_range``.

    The window for day ``d`` and length ``tau`` is days ``d - tau .. d - 1``;
    only exogenous forecasts for day ``d`` itself enter the forecast row.
    """
    taus = sorted(set(int(t) for t in tau_range))
    if not taus or taus[0] < 1:
        raise ValueError("tau_range must contain positive window lengths")
    max_tau = taus[-1]
    if eval_days is None:
        eval_days = range(max_tau + MAX_LAG, panel.n_days)
    days = np.array(sorted(set(int(d) for d in eval_days)), dtype=int)
    if days.size == 0:
        raise InsufficientHistoryError("no evaluation days")
    if days[0] < max_tau + MAX_LAG:
        raise InsufficientHistoryError(
            f"first evaluation day {days[0]} needs {max_tau + MAX_LAG} days of history"
        )
    if days[-1] >= panel.n_days:
        raise InsufficientHistoryError("evaluation days run past the end of the panel")
    missing = [s for s in spec.required_series if s not in panel]
    if missing:
        raise InsufficientHistoryError(f"panel lacks series {missing}")

    mats = {name: np.asarray(panel.matrix(name)) for name in spec.required_series}
    weekdays = _weekdays(panel)
    blocks = [_forecast_day(mats, weekdays, int(d), taus, spec, npit) for d in days]
    values = np.concatenate(blocks, axis=0)
    meta = {"npit": bool(npit), "npit_fit": "per-series, per-window, pooled over hours" if npit else "none"}
    return ForecastPanel(values, days, np.array(taus), spec.market, panel.start_date, meta)


def average_point_forecast(panel: ForecastPanel, taus: Iterable[int] = PAPER_AVERAGING_TAUS) -> np.ndarray:
    """Mean of the selected window columns, shape ``(n_days, 24)``."""
    taus = list(taus)
    if not taus:
        raise UnknownTauError("no averaging windows given")
    cols = np.column_stack([panel.column(t) for t in taus])
    return cols.mean(axis=1).reshape(panel.days.size, HOURS)


@dataclass(frozen=True)
class ErrorSeries:
    errors: np.ndarray  # (n_days, 24)
    days: np.ndarray
    lookback: int = 182

    def window(self, d: int, lookback: int | None = None) -> np.ndarray:
        """Errors of the ``lookback`` days strictly before day ``d``."""
        lookback = lookback or self.lookback
        pos = int(np.searchsorted(self.days, d))
        if pos < lookback or np.any(np.diff(self.days[pos - lookback : pos]) != 1) or (
            pos > 0 and self.days[pos - 1] != d - 1
        ):
            raise InsufficientHistoryError(f"fewer than {lookback} consecutive error days before day {d}")
        return self.errors[pos - lookback : pos]


def compute_errors(prices: np.ndarray, avg_fc: np.ndarray, days: Sequence[int] | None = None,
                   lookback: int = 182) -> ErrorSeries:
    """``prices - avg_fc`` for aligned ``(n_days, 24)`` arrays."""
    prices = np.asarray(prices, dtype=float)
    avg_fc = np.asarray(avg_fc, dtype=float)
    if prices.shape != avg_fc.shape:
        raise DimensionMismatchError(f"prices {prices.shape} vs forecasts {avg_fc.shape}")
    if days is None:
        days = np.arange(prices.shape[0])
    return ErrorSeries(prices - avg_fc, np.asarray(days, dtype=int), lookback)
