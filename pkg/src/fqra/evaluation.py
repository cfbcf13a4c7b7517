"""Coverage backtests for prediction intervals."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import xlogy
from scipy.stats import chi2

from .errors import MisalignedIndexError
from .timeseries import HOURS

SIGNIFICANCE = 0.05
TABLE_LEVELS = (0.50, 0.80, 0.98)


@dataclass(frozen=True)
class HitSeries:
    hits: np.ndarray  # (n_days, 24) of 0/1
    alpha: float

    @property
    def n_days(self) -> int:
        return self.hits.shape[0]

    @property
    def coverage(self) -> float:
        return 1.0 - self.alpha


def compute_hits(prices, lower, upper, alpha: float) -> HitSeries:
    """1 where the price lies in the closed interval ``[lower, upper]``."""
    prices = np.asarray(prices, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not (prices.shape == lower.shape == upper.shape):
        raise MisalignedIndexError(f"prices {prices.shape}, bounds {lower.shape}/{upper.shape}")
    hits = ((prices >= lower) & (prices <= upper)).astype(np.int8)
    if hits.ndim == 1:
        hits = hits[:, None]
    return HitSeries(hits, float(alpha))


def _loglik(n_fail: float, n_hit: float, p_hit: float) -> float:
    # 0 * log(0) := 0
    return float(xlogy(n_fail, 1.0 - p_hit) + xlogy(n_hit, p_hit))


def kupiec_test(hits, alpha: float) -> tuple[float, float]:
    """Unconditional coverage LR statistic and its chi-square(1) p-value."""
    h = np.asarray(hits).ravel()
    n = h.size
    if n == 0:
        raise ValueError("empty hit sequence")
    n1 = float(h.sum())
    n0 = n - n1
    pi0 = 1.0 - alpha
    lr = -2.0 * (_loglik(n0, n1, pi0) - _loglik(n0, n1, n1 / n))
    lr = max(lr, 0.0)
    return lr, float(chi2.sf(lr, 1))


@dataclass(frozen=True)
class ChristoffersenResult:
    lr_cc: float
    p_value: float
    lr_uc: float
    lr_ind: float
    transitions: tuple[int, int, int, int]  # n00, n01, n10, n11


def christoffersen_test(hits, alpha: float) -> ChristoffersenResult:
    """Conditional coverage: Kupiec plus first-order Markov independence, chi-square(2)."""
    h = np.asarray(hits).astype(int).ravel()
    if h.size < 2:
        raise ValueError("need at least two observations")
    lr_uc, _ = kupiec_test(h, alpha)
    prev, nxt = h[:-1], h[1:]
    n00 = int(((prev == 0) & (nxt == 0)).sum())
    n01 = int(((prev == 0) & (nxt == 1)).sum())
    n10 = int(((prev == 1) & (nxt == 0)).sum())
    n11 = int(((prev == 1) & (nxt == 1)).sum())
    pi01 = n01 / (n00 + n01) if n00 + n01 else 0.0
    pi11 = n11 / (n10 + n11) if n10 + n11 else 0.0
    pi = (n01 + n11) / (h.size - 1)
    ll_iid = _loglik(n00 + n10, n01 + n11, pi)
    ll_markov = _loglik(n00, n01, pi01) + _loglik(n10, n11, pi11)
    lr_ind = max(-2.0 * (ll_iid - ll_markov), 0.0)
    lr_cc = lr_uc + lr_ind
    return ChristoffersenResult(lr_cc, float(chi2.sf(lr_cc, 2)), lr_uc, lr_ind, (n00, n01, n10, n11))


@dataclass(frozen=True)
class CoverageReport:
    """Coverage statistics for one method at one nominal level."""

    method: str
    coverage_level: float
    hourly_coverage: np.ndarray
    kupiec_stat: np.ndarray
    kupiec_p: np.ndarray
    christoffersen_stat: np.ndarray
    christoffersen_p: np.ndarray
    significance: float = SIGNIFICANCE

    @property
    def coverage(self) -> float:
        return float(self.hourly_coverage.mean())

    @property
    def ace(self) -> float:
        return self.coverage - self.coverage_level

    @property
    def pass_flags(self) -> np.ndarray:
        return self.christoffersen_p >= self.significance

    @property
    def kupiec_pass_flags(self) -> np.ndarray:
        return self.kupiec_p >= self.significance

    @property
    def pass_count(self) -> int:
        return int(self.pass_flags.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "method": self.method,
            "level": self.coverage_level,
            "hour": np.arange(1, self.hourly_coverage.size + 1),
            "coverage": self.hourly_coverage,
            "kupiec_lr": self.kupiec_stat,
            "kupiec_p": self.kupiec_p,
            "christoffersen_lr": self.christoffersen_stat,
            "christoffersen_p": self.christoffersen_p,
            "pass": self.pass_flags.astype(int),
        })


def coverage_stats(hits: HitSeries) -> tuple[np.ndarray, float, float]:
    """Per-hour coverage, the 24-hour average and the average coverage error."""
    if hits.hits.size == 0:
        raise ValueError("empty hit series")
    hourly = hits.hits.mean(axis=0)
    avg = float(hourly.mean())
    return hourly, avg, avg - hits.coverage


def coverage_report(method: str, hits: HitSeries, significance: float = SIGNIFICANCE) -> CoverageReport:
    hourly, _, _ = coverage_stats(hits)
    k_stat, k_p, c_stat, c_p = (np.empty(hourly.size) for _ in range(4))
    for h in range(hourly.size):
        k_stat[h], k_p[h] = kupiec_test(hits.hits[:, h], hits.alpha)
        res = christoffersen_test(hits.hits[:, h], hits.alpha)
        c_stat[h], c_p[h] = res.lr_cc, res.p_value
    return CoverageReport(method, hits.coverage, hourly, k_stat, k_p, c_stat, c_p, significance)


def pass_count_table(reports: Sequence[CoverageReport], levels: Sequence[float] = TABLE_LEVELS) -> pd.DataFrame:
    """Hours (out of 24) passing the Christoffersen test, methods by levels."""
    rows: dict[str, dict[str, int]] = {}
    for rep in reports:
        if not any(abs(rep.coverage_level - lv) < 1e-9 for lv in levels):
            continue
        rows.setdefault(rep.method, {})[f"{round(rep.coverage_level * 100)}%"] = rep.pass_count
    cols = [f"{round(lv * 100)}%" for lv in levels]
    table = pd.DataFrame.from_dict(rows, orient="index").reindex(columns=cols)
    table.index.name = "method"
    return table


def ace_table(reports: Sequence[CoverageReport]) -> pd.DataFrame:
    """Average coverage error, levels by methods."""
    data: dict[str, dict[float, float]] = {}
    for rep in reports:
        data.setdefault(rep.method, {})[round(rep.coverage_level, 2)] = rep.ace
    table = pd.DataFrame(data).sort_index()
    table.index.name = "level"
    return table


def format_pass_table(table: pd.DataFrame) -> str:
    """Plain-text rendering of a pass-count table."""
    header = ["method"] + list(table.columns)
    widths = [max(8, len(h)) for h in header]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for method, row in table.iterrows():
        cells = [str(method)] + ["-" if pd.isna(v) else f"{int(v)}/{HOURS}" for v in row]
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"


def write_reports(reports: Sequence[CoverageReport], path: str | Path, header_comment: str | None = None) -> None:
    frame = pd.concat([r.to_frame() for r in reports], ignore_index=True)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        frame.to_csv(fh, index=False, float_format="%.10g")


def read_reports(path: str | Path) -> list[CoverageReport]:
    frame = pd.read_csv(path, comment="#")
    out = []
    for (method, level), grp in frame.groupby(["method", "level"], sort=False):
        grp = grp.sort_values("hour")
        out.append(CoverageReport(
            method, float(level), grp["coverage"].to_numpy(), grp["kupiec_lr"].to_numpy(),
            grp["kupiec_p"].to_numpy(), grp["christoffersen_lr"].to_numpy(), grp["christoffersen_p"].to_numpy(),
        ))
    return out
