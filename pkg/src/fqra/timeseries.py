"""Hourly market panel, calendar normalization and the N-PIT transform."""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd
from scipy.special import ndtr, ndtri

from .errors import (
    DegenerateSampleError,
    GapAtBoundaryError,
    MalformedHeaderError,
    MissingDayError,
    NonMonotoneTimestampsError,
    UnknownSeriesError,
)

log = logging.getLogger(__name__)

HOURS = 24
KNOWN_SERIES = (
    "da_price",
    "id3_price",
    "id_partial",
    "load_fc",
    "wind_fc",
    "solar_fc",
    "gas_price",
    "eua_price",
)
# quoted once per trading day, replicated over the 24 delivery hours
DAILY_SERIES = ("gas_price", "eua_price")
TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M"


@dataclass(frozen=True)
class HourlyPanel:
    """Calendar-aligned hourly data, ``24 * n_days`` values per series.

    Row ``t = 24 * d + (h - 1)`` holds day index ``d`` (0-based) and delivery
    hour ``h`` in 1..24.  A raw panel may contain NaN gaps and a map of
    duplicated hours (``t -> {series: second value}``); :func:`normalize_calendar`
    removes both.
    """

    start_date: dt.date
    n_days: int
    series: Mapping[str, np.ndarray]
    duplicates: Mapping[int, Mapping[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        frozen = {}
        for name, values in self.series.items():
            arr = np.array(values, dtype=float)
            if arr.shape != (HOURS * self.n_days,):
                raise ValueError(
                    f"series {name!r} has {arr.size} values, expected {HOURS * self.n_days}"
                )
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "series", frozen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def __contains__(self, name: str) -> bool:
        return name in self.series

    @property
    def names(self) -> list[str]:
        return list(self.series)

    def matrix(self, name: str) -> np.ndarray:
        """Series as an ``(n_days, 24)`` array."""
        return self.series[name].reshape(self.n_days, HOURS)

    def date(self, d: int) -> dt.date:
        return self.start_date + dt.timedelta(days=int(d))

    def dates(self) -> list[dt.date]:
        return [self.date(d) for d in range(self.n_days)]

    def day_index(self, date: dt.date) -> int:
        return (date - self.start_date).days

    def weekday(self, d: int) -> int:
        """0 = Monday ... 6 = Sunday."""
        return self.date(d).weekday()

    @property
    def is_normalized(self) -> bool:
        if self.duplicates:
            return False
        return not any(np.isnan(v).any() for v in self.series.values())

    def with_series(self, **updates: np.ndarray) -> "HourlyPanel":
        merged = dict(self.series)
        merged.update(updates)
        return HourlyPanel(self.start_date, self.n_days, merged, self.duplicates)

    def slice_days(self, first: int, stop: int) -> "HourlyPanel":
        lo, hi = HOURS * first, HOURS * stop
        return HourlyPanel(
            self.date(first),
            stop - first,
            {k: v[lo:hi] for k, v in self.series.items()},
            {t - lo: v for t, v in self.duplicates.items() if lo <= t < hi},
        )

    def to_frame(self) -> pd.DataFrame:
        idx = pd.date_range(pd.Timestamp(self.start_date), periods=HOURS * self.n_days, freq="h")
        frame = pd.DataFrame(dict(self.series), index=idx)
        frame.index.name = "timestamp"
        return frame

    def to_csv(self, path: str | Path) -> None:
        frame = self.to_frame()
        frame.index = frame.index.strftime(TIMESTAMP_FORMAT)
        frame.to_csv(path, float_format="%.10g")


def load_market_csv(path: str | Path, schema: Iterable[str] | None = None) -> HourlyPanel:
    """Read one market's hourly CSV into a raw :class:`HourlyPanel`.

    The file starts with ``timestamp,<series-id>,...``; timestamps are local
    market time ``YYYY-MM-DD HH:00`` and empty cells are missing values.
    Lines starting with ``#`` are comments.  A
    repeated timestamp (autumn clock change) keeps the second row in
    ``duplicates``; a skipped hour (spring clock change) becomes NaN.
    """
    path = Path(path)
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, comment="#")
    header = list(raw.columns)
    if not header or header[0].strip() != "timestamp" or len(header) < 2:
        raise MalformedHeaderError(f"{path}: header must start with 'timestamp' and name >= 1 series")
    names = [h.strip() for h in header[1:]]
    if len(set(names)) != len(names):
        raise MalformedHeaderError(f"{path}: duplicated series in header {names}")
    unknown = [n for n in names if n not in KNOWN_SERIES]
    if unknown:
        raise UnknownSeriesError(f"{path}: unknown series {unknown}")
    if schema is not None:
        schema = list(schema)
        bad = [s for s in schema if s not in KNOWN_SERIES]
        if bad:
            raise UnknownSeriesError(f"schema names unknown series {bad}")
        if sorted(schema) != sorted(names):
            raise MalformedHeaderError(f"{path}: header {names} does not match schema {schema}")

    stamps = []
    for row, text in enumerate(raw.iloc[:, 0], start=2):
        try:
            ts = dt.datetime.strptime(text.strip(), TIMESTAMP_FORMAT)
        except ValueError:
            raise MalformedHeaderError(f"{path}:{row}: unparseable timestamp {text!r}") from None
        if ts.minute != 0:
            raise NonMonotoneTimestampsError(f"{path}:{row}: {text!r} is off the hourly grid")
        stamps.append(ts)
    if not stamps:
        raise MalformedHeaderError(f"{path}: no data rows")

    start = stamps[0].date()
    n_days = (stamps[-1].date() - start).days + 1
    origin = dt.datetime.combine(start, dt.time())
    values = {n: np.full(HOURS * n_days, np.nan) for n in names}
    cells = raw.iloc[:, 1:].to_numpy()
    duplicates: dict[int, dict[str, float]] = {}
    prev = None
    for i, ts in enumerate(stamps):
        t = int((ts - origin).total_seconds() // 3600)
        if prev is not None:
            if t < prev:
                raise NonMonotoneTimestampsError(f"{path}: timestamp {ts} goes backwards")
            if t == prev:
                if t in duplicates:
                    raise NonMonotoneTimestampsError(f"{path}: hour {ts} appears more than twice")
                duplicates[t] = {n: _cell(cells[i, j]) for j, n in enumerate(names)}
                continue
        for j, n in enumerate(names):
            values[n][t] = _cell(cells[i, j])
        prev = t
    return HourlyPanel(start, n_days, values, duplicates)


def _cell(text: str) -> float:
    text = text.strip()
    return float(text) if text else np.nan


def normalize_calendar(panel: HourlyPanel, partial_fallback: str = "da_price") -> HourlyPanel:
    """Remove clock-change artefacts and fill gaps.

    * duplicated hours collapse to the mean of the pair;
    * missing hourly values become the mean of the nearest observed
      neighbours on each side;
    * daily commodity series take the day's first quote, and days without a
      quote (weekends, holidays) inherit the most recent earlier quote;
    * ``id_partial`` gaps mean "no transactions yet" and take the value of
      ``partial_fallback`` at the same hour.
    """
    hourly_names = [n for n in panel.names if n not in DAILY_SERIES and n != "id_partial"]
    if hourly_names:
        stacked = np.stack([panel.matrix(n) for n in hourly_names])
        empty_days = np.flatnonzero(np.isnan(stacked).all(axis=(0, 2)))
        if empty_days.size:
            raise MissingDayError(f"no observations at all on {panel.date(empty_days[0])}")

    out = {}
    for name in panel.names:
        values = np.array(panel[name], dtype=float)
        for t, dup in panel.duplicates.items():
            pair = np.array([values[t], dup.get(name, np.nan)])
            if not np.isnan(pair).all():
                values[t] = np.nanmean(pair)
        if name in DAILY_SERIES:
            values = _fill_daily(values, panel.n_days, name)
        elif name != "id_partial":
            values = _fill_neighbours(values, name)
        out[name] = values

    if "id_partial" in out:
        partial = out["id_partial"]
        gaps = np.isnan(partial)
        if gaps.any():
            if partial_fallback not in out:
                raise UnknownSeriesError(f"id_partial gaps need {partial_fallback!r} to fill them")
            partial[gaps] = out[partial_fallback][gaps]
    return HourlyPanel(panel.start_date, panel.n_days, out)


def _fill_neighbours(values: np.ndarray, name: str) -> np.ndarray:
    missing = np.isnan(values)
    if not missing.any():
        return values
    observed = np.flatnonzero(~missing)
    if observed.size == 0 or missing[0] or missing[-1]:
        raise GapAtBoundaryError(f"series {name!r} has a gap without neighbours on both sides")
    gaps = np.flatnonzero(missing)
    right = np.searchsorted(observed, gaps)
    left_vals = values[observed[right - 1]]
    right_vals = values[observed[right]]
    values[gaps] = 0.5 * (left_vals + right_vals)
    return values


def _fill_daily(values: np.ndarray, n_days: int, name: str) -> np.ndarray:
    days = values.reshape(n_days, HOURS)
    quote = np.full(n_days, np.nan)
    for d in range(n_days):
        seen = days[d][~np.isnan(days[d])]
        if seen.size:
            quote[d] = seen[0]
        elif d == 0:
            raise GapAtBoundaryError(f"series {name!r} has no quote on the first day")
        else:
            quote[d] = quote[d - 1]
    return np.repeat(quote, HOURS)


@dataclass(frozen=True)
class NpitMap:
    """Empirical-CDF-then-probit map fitted on one sample.

    The ECDF uses plotting positions ``(rank - 0.5) / n`` (mid-ranks for
    ties), linearly interpolated between distinct sample values and clamped
    into ``[clamp_eps, 1 - clamp_eps]``.
    """

    sorted_sample: np.ndarray
    clamp_eps: float
    knots: np.ndarray = field(repr=False)
    probs: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.sorted_sample.size

    def transform(self, x):
        p = np.interp(x, self.knots, self.probs)
        p = np.clip(p, self.clamp_eps, 1.0 - self.clamp_eps)
        out = ndtri(p)
        return float(out) if np.ndim(out) == 0 else out

    def inverse(self, y):
        p = ndtr(np.asarray(y, dtype=float))
        out = np.interp(p, self.probs, self.knots)
        return float(out) if np.ndim(out) == 0 else out


def npit_fit(sample, clamp_eps: float | None = None) -> NpitMap:
    sample = np.sort(np.asarray(sample, dtype=float).ravel())
    n = sample.size
    if n < 2:
        raise DegenerateSampleError("N-PIT needs at least two observations")
    if not np.isfinite(sample).all():
        raise DegenerateSampleError("N-PIT sample contains non-finite values")
    if sample[0] == sample[-1]:
        raise DegenerateSampleError("N-PIT sample is constant")
    if clamp_eps is None:
        clamp_eps = 1.0 / (2 * n)
    if not 0.0 < clamp_eps < 0.5:
        raise ValueError("clamp_eps must lie in (0, 0.5)")
    knots, first, counts = np.unique(sample, return_index=True, return_counts=True)
    mid_rank = first + (counts + 1) / 2.0  # 1-based average rank of each tie block
    probs = (mid_rank - 0.5) / n
    for arr in (sample, knots, probs):
        arr.setflags(write=False)
    return NpitMap(sample, float(clamp_eps), knots, probs)


def npit_transform(fitted: NpitMap, x):
    return fitted.transform(x)


def npit_inverse(fitted: NpitMap, y):
    return fitted.inverse(y)
