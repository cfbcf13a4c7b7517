import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fqra.errors import BoundaryOutOfRangeError, DimensionMismatchError
from fqra.trading import (
    EPEX_REGIMES,
    BatterySpec,
    DayOrders,
    perfect_foresight_cash,
    regime_report,
    regimes_from_boundaries,
    run_benchmark,
    run_strategy,
    select_hours,
    settle_day,
)

ETA = 0.9
START = dt.date(2022, 3, 1)


def dates(n):
    return [START + dt.timedelta(days=i) for i in range(n)]


def brute_hours(p, eta=ETA):
    best, arg = -np.inf, None
    for h1 in range(24):
        for h2 in range(h1 + 1, 24):
            v = eta * p[h2] - p[h1] / eta
            if v > best:
                best, arg = v, (h1 + 1, h2 + 1)
    return arg


class TestBattery:
    def test_volumes(self):
        b = BatterySpec()
        assert b.buy_volume == pytest.approx(1 / 0.9)
        assert b.sell_volume == pytest.approx(0.9)
        assert b.cycle_volume == 0.9 + 1 / 0.9

    def test_validation(self):
        with pytest.raises(ValueError):
            BatterySpec(efficiency=0.0)
        with pytest.raises(ValueError):
            BatterySpec(min_soc_fraction=1.0)
        with pytest.raises(ValueError):
            BatterySpec(capacity_mw=1.0, min_soc_fraction=0.2)


class TestSelectHours:
    def test_increasing(self):
        assert select_hours(np.arange(24.0)) == (1, 24)

    def test_constant_tie_break(self):
        assert select_hours(np.full(24, 50.0)) == (1, 2)

    def test_v_shape(self):
        p = np.abs(np.arange(24) - 3) * 2.0
        p[18] = 100.0
        assert select_hours(p) == (4, 19) == brute_hours(p)

    def test_rejects_bad_input(self):
        with pytest.raises(DimensionMismatchError):
            select_hours(np.ones(23))
        with pytest.raises(DimensionMismatchError):
            select_hours(np.r_[np.ones(23), np.nan])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-20, 20), min_size=24, max_size=24))
    def test_brute_force_with_ties(self, values):
        p = np.array(values, dtype=float)
        assert select_hours(p) == brute_hours(p)


class TestSettleDay:
    prices = np.linspace(10, 50, 24)

    def test_infinite_limits(self):
        r = settle_day(DayOrders(2, 20, np.inf, -np.inf), self.prices, 30.0)
        assert r.accept_buy and r.accept_sell
        assert r.cash == pytest.approx(ETA * self.prices[19] - self.prices[1] / ETA)
        assert r.volume == pytest.approx(ETA + 1 / ETA)

    def test_no_action(self):
        r = settle_day(DayOrders(2, 20, 0.0, 1000.0), self.prices, 30.0)
        assert not r.accept_buy and not r.accept_sell
        assert r.cash == 0.0 and r.volume == 0.0

    def test_buy_only_unwinds_next_morning(self):
        p = np.full(24, 20.0)
        p[9] = 40.0
        r = settle_day(DayOrders(1, 10, 25.0, 45.0), p, 30.0)
        assert r.accept_buy and not r.accept_sell
        assert r.cash == pytest.approx(ETA * 30.0 - 20.0 / ETA)
        assert r.volume == pytest.approx(ETA + 1 / ETA)

    def test_sell_only_unwinds_next_morning(self):
        p = np.full(24, 20.0)
        p[9] = 40.0
        r = settle_day(DayOrders(1, 10, 5.0, 35.0), p, 30.0)
        assert not r.accept_buy and r.accept_sell
        assert r.cash == pytest.approx(ETA * 40.0 - 30.0 / ETA)

    def test_unresolved_without_next_price(self):
        p = np.full(24, 20.0)
        r = settle_day(DayOrders(1, 10, 25.0, 45.0), p, None)
        assert not r.resolved

    def test_limits_boundary_accepts(self):
        p = np.full(24, 20.0)
        r = settle_day(DayOrders(1, 2, 20.0, 20.0), p, None)
        assert r.accept_buy and r.accept_sell

    def test_order_validation(self):
        with pytest.raises(ValueError):
            DayOrders(5, 5, 1.0, 1.0)
        with pytest.raises(ValueError):
            DayOrders(1, 2, np.nan, 1.0)


class TestStrategy:
    def test_perfect_foresight_oracle(self, rng):
        prices = rng.normal(40, 15, size=(60, 24))
        ledger = run_strategy(prices, prices, prices, prices, dates(60))
        oracle = []
        for day in prices:
            h1, h2 = brute_hours(day)
            oracle.append(ETA * day[h2 - 1] - day[h1 - 1] / ETA)
        np.testing.assert_array_equal(ledger.cash, oracle)
        np.testing.assert_array_equal(perfect_foresight_cash(prices), oracle)
        assert all(r.accept_buy and r.accept_sell for r in ledger.days)

    def test_infinite_limits_equal_benchmark(self, rng):
        fc = rng.normal(40, 10, size=(30, 24))
        prices = fc + rng.normal(size=(30, 24))
        inf = np.full_like(fc, np.inf)
        a = run_strategy(fc, -inf, inf, prices, dates(30), label="benchmark")
        b = run_benchmark(fc, prices, dates(30))
        assert a.to_csv_bytes() == b.to_csv_bytes()

    def test_benchmark_volume(self, rng):
        fc = rng.normal(size=(10, 24))
        b = run_benchmark(fc, fc, dates(10))
        np.testing.assert_array_equal(b.volume, 0.9 + 1 / 0.9)
        assert b.relative_volume(b) == 1.0

    def test_constant_prices_lose(self):
        p = np.full((3, 24), 50.0)
        b = run_benchmark(p, p, dates(3))
        np.testing.assert_allclose(b.cash, (ETA - 1 / ETA) * 50.0)

    def test_zero_volume_flag(self):
        p = np.full((3, 24), 50.0)
        led = run_strategy(p, p + 100, p - 100, p, dates(3))
        assert led.total_volume == 0.0
        assert led.profit_per_mwh is None
        assert led.summary()["no_trades"]

    def test_monotone_participation(self, rng):
        fc = rng.normal(40, 10, size=(80, 24))
        prices = fc + rng.normal(scale=5, size=(80, 24))
        bench = run_benchmark(fc, prices, dates(80))
        vols = []
        for w in np.linspace(0, 15, 10):
            led = run_strategy(fc, fc - w, fc + w, prices, dates(80), next_day_h1=40.0)
            vols.append(led.relative_volume(bench))
        assert (np.diff(vols) >= 0).all()
        assert max(vols) <= 1.0

    def test_cash_scales(self, rng):
        fc = rng.normal(40, 10, size=(20, 24))
        prices = fc + rng.normal(size=(20, 24))
        a = run_strategy(fc, fc - 1, fc + 1, prices, dates(20), next_day_h1=30.0)
        b = run_strategy(3 * fc, 3 * (fc - 1), 3 * (fc + 1), 3 * prices, dates(20), next_day_h1=90.0)
        np.testing.assert_allclose(b.cash, 3 * a.cash)

    def test_alignment(self):
        with pytest.raises(DimensionMismatchError):
            run_strategy(np.ones((3, 24)), np.ones((3, 24)), np.ones((2, 24)), np.ones((3, 24)), dates(3))
        with pytest.raises(DimensionMismatchError):
            run_benchmark(np.ones((3, 24)), np.ones((3, 24)), dates(2))

    def test_ledger_csv_columns(self, tmp_path, rng):
        fc = rng.normal(size=(4, 24))
        led = run_benchmark(fc, fc, dates(4))
        led.to_csv(tmp_path / "l.csv", "config_hash=abc")
        lines = (tmp_path / "l.csv").read_text().splitlines()
        assert lines[0] == "# config_hash=abc"
        assert lines[1].startswith("date,h1,h2,buy_limit,sell_limit,accept_buy,accept_sell,cash,volume")
        assert len(lines) == 6


class TestRegimes:
    def ledger(self, rng, n=40):
        fc = rng.normal(40, 10, size=(n, 24))
        prices = fc + rng.normal(size=(n, 24))
        return run_strategy(fc, fc - 2, fc + 2, prices, dates(n), next_day_h1=40.0), run_benchmark(fc, prices, dates(n))

    def test_single_regime_is_global(self, rng):
        led, bench = self.ledger(rng)
        rep = regime_report(led, [(START, START + dt.timedelta(days=39))], bench)
        assert rep[0]["total_profit"] == pytest.approx(led.total_profit)
        assert rep[0]["relative_volume"] == pytest.approx(led.relative_volume(bench))

    def test_partition_additivity(self, rng):
        led, bench = self.ledger(rng)
        regimes = regimes_from_boundaries([START, START + dt.timedelta(days=15)], START + dt.timedelta(days=39))
        rep = regime_report(led, regimes, bench)
        assert sum(r["total_volume"] for r in rep) == pytest.approx(led.total_volume)
        assert sum(r["n_days"] for r in rep) == 40

    def test_out_of_range(self, rng):
        led, _ = self.ledger(rng)
        with pytest.raises(BoundaryOutOfRangeError):
            regime_report(led, [(dt.date(2000, 1, 1), dt.date(2000, 2, 1))])

    def test_epex_presets(self):
        assert len(EPEX_REGIMES) == 3
        assert EPEX_REGIMES[0][0] == dt.date(2017, 6, 29)
        assert EPEX_REGIMES[1] == (dt.date(2021, 1, 1), dt.date(2022, 12, 31))
        assert EPEX_REGIMES[2] == (dt.date(2023, 1, 1), dt.date(2023, 12, 31))
