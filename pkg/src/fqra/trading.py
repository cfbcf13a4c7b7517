"""Battery arbitrage driven by quantile forecasts, and the unlimited-bids benchmark.

Each day the trader picks a charge hour ``h1`` and a later discharge hour
``h2`` from the point forecast, bids to buy ``1/eta`` MWh at ``h1`` with the
upper interval bound as limit and offers ``eta`` MWh at ``h2`` with the
lower bound as limit.  A leg that clears alone is completed by a
price-taker trade at hour 1 of the next day.
"""
from __future__ import annotations

import datetime as dt
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import BoundaryOutOfRangeError, DimensionMismatchError
from .timeseries import HOURS

# (start, end) inclusive, EPEX day-ahead evaluation sub-periods
EPEX_REGIMES = (
    (dt.date(2017, 6, 29), dt.date(2020, 12, 31)),
    (dt.date(2021, 1, 1), dt.date(2022, 12, 31)),
    (dt.date(2023, 1, 1), dt.date(2023, 12, 31)),
)


@dataclass(frozen=True)
class BatterySpec:
    capacity_mw: float = 2.5
    efficiency: float = 0.9
    min_soc_fraction: float = 0.2
    daily_trade_energy: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in (0, 1]")
        if not 0.0 <= self.min_soc_fraction < 1.0:
            raise ValueError("min_soc_fraction must lie in [0, 1)")
        usable = self.capacity_mw * (1.0 - self.min_soc_fraction)
        if self.buy_volume > usable:
            raise ValueError(f"daily charge of {self.buy_volume:.3f} MWh exceeds usable capacity {usable:.3f} MWh")

    @property
    def buy_volume(self) -> float:
        return self.daily_trade_energy / self.efficiency

    @property
    def sell_volume(self) -> float:
        return self.daily_trade_energy * self.efficiency

    @property
    def cycle_volume(self) -> float:
        return self.buy_volume + self.sell_volume


def select_hours(point_fc, efficiency: float = 0.9) -> tuple[int, int]:
    """Charge/discharge hours (1-based, ``h1 < h2``) maximising ``eta*P[h2] - P[h1]/eta``.

    Ties go to the earliest ``h1``, then the earliest ``h2``.
    """
    p = np.asarray(point_fc, dtype=float)
    if p.shape != (HOURS,) or not np.isfinite(p).all():
        raise DimensionMismatchError("select_hours needs 24 finite forecasts")
    gain = efficiency * p[None, :] - p[:, None] / efficiency
    gain[np.tril_indices(HOURS)] = -np.inf
    flat = int(np.argmax(gain))
    h1, h2 = divmod(flat, HOURS)
    return h1 + 1, h2 + 1


@dataclass(frozen=True)
class DayOrders:
    h1: int
    h2: int
    buy_limit: float
    sell_limit: float
    alpha: float | None = None

    def __post_init__(self):
        if not 1 <= self.h1 < self.h2 <= HOURS:
            raise ValueError(f"need 1 <= h1 < h2 <= 24, got ({self.h1}, {self.h2})")
        if np.isnan(self.buy_limit) or np.isnan(self.sell_limit):
            raise ValueError("order limits must not be NaN")


@dataclass(frozen=True)
class DayResult:
    h1: int
    h2: int
    buy_limit: float
    sell_limit: float
    accept_buy: bool
    accept_sell: bool
    cash: float
    volume: float
    resolved: bool = True


def settle_day(orders: DayOrders, prices_today, price_next_day_h1: float | None,
               battery: BatterySpec = BatterySpec()) -> DayResult:
    """Clear both legs against realized prices; unwind a lone leg at next-day hour 1."""
    prices_today = np.asarray(prices_today, dtype=float)
    eta, energy = battery.efficiency, battery.daily_trade_energy
    p1 = prices_today[orders.h1 - 1]
    p2 = prices_today[orders.h2 - 1]
    buy = bool(p1 <= orders.buy_limit)
    sell = bool(p2 >= orders.sell_limit)

    # written as energy * (eta * P) and energy * P / eta to match the selection objective exactly
    def revenue(price):
        return energy * (eta * price)

    def cost(price):
        return energy * (price / eta)

    cash, volume, resolved = 0.0, 0.0, True
    if buy and sell:
        cash = revenue(p2) - cost(p1)
        volume = battery.cycle_volume
    elif buy or sell:
        if buy:
            cash = -cost(p1)
            volume = battery.buy_volume
        else:
            cash = revenue(p2)
            volume = battery.sell_volume
        if price_next_day_h1 is None or not np.isfinite(price_next_day_h1):
            resolved = False
        elif buy:
            cash += revenue(price_next_day_h1)
            volume += battery.sell_volume
        else:
            cash -= cost(price_next_day_h1)
            volume += battery.buy_volume
    return DayResult(orders.h1, orders.h2, float(orders.buy_limit), float(orders.sell_limit),
                     buy, sell, float(cash), float(volume), resolved)


LEDGER_COLUMNS = ("date", "h1", "h2", "buy_limit", "sell_limit", "accept_buy", "accept_sell", "cash", "volume")


@dataclass(frozen=True)
class TradeLedger:
    label: str
    dates: tuple[dt.date, ...]
    days: tuple[DayResult, ...]

    @property
    def resolved_mask(self) -> np.ndarray:
        return np.array([r.resolved for r in self.days], dtype=bool)

    @property
    def cash(self) -> np.ndarray:
        return np.array([r.cash for r in self.days])

    @property
    def volume(self) -> np.ndarray:
        return np.array([r.volume for r in self.days])

    @property
    def total_profit(self) -> float:
        return float(self.cash[self.resolved_mask].sum())

    @property
    def total_volume(self) -> float:
        return float(self.volume[self.resolved_mask].sum())

    @property
    def profit_per_mwh(self) -> float | None:
        """Total cash over total MWh; ``None`` when nothing was traded."""
        vol = self.total_volume
        return None if vol == 0.0 else self.total_profit / vol

    def relative_volume(self, benchmark: "TradeLedger") -> float:
        return self.total_volume / benchmark.total_volume

    def subset(self, start: dt.date, end: dt.date) -> "TradeLedger":
        keep = [i for i, d in enumerate(self.dates) if start <= d <= end]
        return TradeLedger(self.label, tuple(self.dates[i] for i in keep), tuple(self.days[i] for i in keep))

    def summary(self, benchmark: "TradeLedger | None" = None) -> dict:
        ppm = self.profit_per_mwh
        out = {
            "label": self.label,
            "n_days": len(self.days),
            "unresolved_days": int((~self.resolved_mask).sum()),
            "total_profit": self.total_profit,
            "total_volume": self.total_volume,
            "profit_per_mwh": ppm,
            "no_trades": ppm is None,
        }
        if benchmark is not None:
            out["relative_volume"] = self.relative_volume(benchmark)
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "date": [d.isoformat() for d in self.dates],
            "h1": [r.h1 for r in self.days],
            "h2": [r.h2 for r in self.days],
            "buy_limit": [r.buy_limit for r in self.days],
            "sell_limit": [r.sell_limit for r in self.days],
            "accept_buy": [int(r.accept_buy) for r in self.days],
            "accept_sell": [int(r.accept_sell) for r in self.days],
            "cash": [r.cash for r in self.days],
            "volume": [r.volume for r in self.days],
            "resolved": [int(r.resolved) for r in self.days],
        })

    def to_csv_bytes(self, header_comment: str | None = None) -> bytes:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        self.to_frame().to_csv(buf, index=False, float_format="%.17g")
        return buf.getvalue().encode()

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        Path(path).write_bytes(self.to_csv_bytes(header_comment))


def _check_aligned(*arrays: np.ndarray) -> int:
    shape = arrays[0].shape
    if len(shape) != 2 or shape[1] != HOURS or any(a.shape != shape for a in arrays):
        raise DimensionMismatchError(f"inputs must share shape (n_days, 24); got {[a.shape for a in arrays]}")
    return shape[0]


def run_strategy(
    point_fc,
    lower,
    upper,
    prices,
    dates: Sequence[dt.date],
    battery: BatterySpec = BatterySpec(),
    next_day_h1: float | None = None,
    label: str = "strategy",
    alpha: float | None = None,
) -> TradeLedger:
    """Quantile-limit strategy: bid at the upper bound for ``h1``, offer at the lower bound for ``h2``.

    ``next_day_h1`` is the realized hour-1 price after the last day, used
    only when that day needs an unwind.
    """
    point_fc, lower, upper, prices = (np.asarray(a, dtype=float) for a in (point_fc, lower, upper, prices))
    n = _check_aligned(point_fc, lower, upper, prices)
    if len(dates) != n:
        raise DimensionMismatchError("one date per day required")
    results = []
    for i in range(n):
        h1, h2 = select_hours(point_fc[i], battery.efficiency)
        orders = DayOrders(h1, h2, upper[i, h1 - 1], lower[i, h2 - 1], alpha)
        nxt = prices[i + 1, 0] if i + 1 < n else next_day_h1
        results.append(settle_day(orders, prices[i], nxt, battery))
    return TradeLedger(label, tuple(dates), tuple(results))


def run_benchmark(point_fc, prices, dates: Sequence[dt.date], battery: BatterySpec = BatterySpec(),
                  label: str = "benchmark") -> TradeLedger:
    """Price-taker trades at the forecast-cheapest and forecast-dearest hours every day."""
    point_fc = np.asarray(point_fc, dtype=float)
    inf = np.full(point_fc.shape, np.inf)
    return run_strategy(point_fc, -inf, inf, prices, dates, battery, None, label)


def perfect_foresight_cash(prices, efficiency: float = 0.9) -> np.ndarray:
    """Exhaustive-search daily optimum of ``eta*P[h2] - P[h1]/eta`` over ``h1 < h2``."""
    prices = np.asarray(prices, dtype=float)
    out = np.empty(prices.shape[0])
    for i, day in enumerate(prices):
        best = -np.inf
        for h1 in range(HOURS):
            for h2 in range(h1 + 1, HOURS):
                best = max(best, efficiency * day[h2] - day[h1] / efficiency)
        out[i] = best
    return out


def regime_report(ledger: TradeLedger, regimes: Sequence[tuple[dt.date, dt.date]],
                  benchmark: TradeLedger | None = None) -> list[dict]:
    """Profit per MWh and relative volume within each ``(start, end)`` regime (inclusive)."""
    if not ledger.dates:
        raise BoundaryOutOfRangeError("empty ledger")
    first, last = min(ledger.dates), max(ledger.dates)
    out = []
    for start, end in regimes:
        if start > end or end < first or start > last:
            raise BoundaryOutOfRangeError(f"regime {start}..{end} lies outside {first}..{last}")
        part = ledger.subset(start, end)
        bench = benchmark.subset(start, end) if benchmark is not None else None
        row = part.summary(bench)
        row.update(start=start.isoformat(), end=end.isoformat())
        out.append(row)
    return out


def regimes_from_boundaries(boundaries: Sequence[dt.date], last: dt.date) -> list[tuple[dt.date, dt.date]]:
    """Turn regime start dates into consecutive ``(start, end)`` pairs ending at ``last``."""
    starts = sorted(boundaries)
    ends = [s - dt.timedelta(days=1) for s in starts[1:]] + [last]
    return list(zip(starts, ends))


def write_summary(summaries: list[dict], path: str | Path, config_hash: str | None = None) -> None:
    payload = {"config_hash": config_hash, "summaries": summaries}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True, default=str) + "\n")
