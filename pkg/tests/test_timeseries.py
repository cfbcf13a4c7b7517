import datetime as dt

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

from fqra.errors import (
    DegenerateSampleError,
    GapAtBoundaryError,
    MalformedHeaderError,
    MissingDayError,
    NonMonotoneTimestampsError,
    UnknownSeriesError,
)
from fqra.timeseries import (
    HOURS,
    HourlyPanel,
    load_market_csv,
    normalize_calendar,
    npit_fit,
    npit_inverse,
    npit_transform,
)

from conftest import hourly_rows, write_csv


class TestLoadMarketCsv:
    def test_two_days_two_series(self, tmp_path):
        a = np.arange(48.0)
        b = 100 + np.arange(48.0)
        path = write_csv(tmp_path / "m.csv", ["timestamp", "da_price", "load_fc"],
                         hourly_rows(dt.datetime(2021, 3, 1), 48, a, b))
        panel = load_market_csv(path)
        assert panel.n_days == 2
        assert sorted(panel.names) == ["da_price", "load_fc"]
        np.testing.assert_array_equal(panel["da_price"], a)
        assert panel.matrix("load_fc").shape == (2, HOURS)
        assert panel.start_date == dt.date(2021, 3, 1)

    def test_autumn_clock_change_keeps_duplicate(self, tmp_path):
        rows = hourly_rows(dt.datetime(2021, 10, 31), 24, np.arange(24.0))
        # hour 02:00 repeated with a different value
        rows.insert(3, ["2021-10-31 02:00", "34"])
        rows[2][1] = "30"
        path = write_csv(tmp_path / "m.csv", ["timestamp", "da_price"], rows)
        panel = load_market_csv(path)
        assert panel.n_days == 1
        assert panel["da_price"][2] == 30.0
        assert panel.duplicates == {2: {"da_price": 34.0}}
        assert not panel.is_normalized

    def test_spring_clock_change_leaves_gap(self, tmp_path):
        rows = hourly_rows(dt.datetime(2021, 3, 28), 24, np.arange(24.0))
        del rows[2]
        path = write_csv(tmp_path / "m.csv", ["timestamp", "da_price"], rows)
        panel = load_market_csv(path)
        assert np.isnan(panel["da_price"][2])
        assert np.isfinite(np.delete(panel["da_price"], 2)).all()

    def test_empty_cell_is_missing(self, tmp_path):
        rows = hourly_rows(dt.datetime(2021, 1, 4), 24, np.ones(24))
        rows[5][1] = ""
        path = write_csv(tmp_path / "m.csv", ["timestamp", "da_price"], rows)
        assert np.isnan(load_market_csv(path)["da_price"][5])

    def test_comment_lines_are_skipped(self, tmp_path):
        rows = hourly_rows(dt.datetime(2021, 1, 4), 24, np.ones(24))
        path = tmp_path / "m.csv"
        write_csv(path, ["timestamp", "da_price"], rows)
        path.write_text("# produced upstream\n" + path.read_text())
        assert load_market_csv(path).n_days == 1

    def test_bad_header(self, tmp_path):
        path = write_csv(tmp_path / "m.csv", ["time", "da_price"], hourly_rows(dt.datetime(2021, 1, 4), 24, np.ones(24)))
        with pytest.raises(MalformedHeaderError):
            load_market_csv(path)

    def test_unknown_series(self, tmp_path):
        path = write_csv(tmp_path / "m.csv", ["timestamp", "coal"], hourly_rows(dt.datetime(2021, 1, 4), 24, np.ones(24)))
        with pytest.raises(UnknownSeriesError):
            load_market_csv(path)

    def test_schema_mismatch(self, tmp_path):
        path = write_csv(tmp_path / "m.csv", ["timestamp", "da_price"], hourly_rows(dt.datetime(2021, 1, 4), 24, np.ones(24)))
        with pytest.raises(MalformedHeaderError):
            load_market_csv(path, schema=["da_price", "load_fc"])
        assert load_market_csv(path, schema=["da_price"]).n_days == 1

    def test_unparseable_timestamp(self, tmp_path):
        rows = hourly_rows(dt.datetime(2021, 1, 4), 24, np.ones(24))
        rows[3][0] = "yesterday"
        path = write_csv(tmp_path / "m.csv", ["timestamp", "da_price"], rows)
        with pytest.raises(MalformedHeaderError):
            load_market_csv(path)

    def test_backwards_timestamp(self, tmp_path):
        rows = hourly_rows(dt.datetime(2021, 1, 4), 24, np.ones(24))
        rows[3], rows[4] = rows[4], rows[3]
        path = write_csv(tmp_path / "m.csv", ["timestamp", "da_price"], rows)
        with pytest.raises(NonMonotoneTimestampsError):
            load_market_csv(path)

    def test_off_grid_timestamp(self, tmp_path):
        rows = hourly_rows(dt.datetime(2021, 1, 4), 24, np.ones(24))
        rows[3][0] = "2021-01-04 03:30"
        path = write_csv(tmp_path / "m.csv", ["timestamp", "da_price"], rows)
        with pytest.raises(NonMonotoneTimestampsError):
            load_market_csv(path)

    def test_triplicated_hour(self, tmp_path):
        rows = hourly_rows(dt.datetime(2021, 1, 4), 24, np.ones(24))
        rows[3:3] = [list(rows[2]), list(rows[2])]
        path = write_csv(tmp_path / "m.csv", ["timestamp", "da_price"], rows)
        with pytest.raises(NonMonotoneTimestampsError):
            load_market_csv(path)


def raw_panel(n_days=2, start=dt.date(2021, 1, 8), **series):
    return HourlyPanel(start, n_days, series)


class TestNormalizeCalendar:
    def test_gap_gets_neighbour_mean(self):
        v = np.arange(48.0)
        v[10] = np.nan
        v[9], v[11] = 10.0, 20.0
        out = normalize_calendar(raw_panel(da_price=v))
        assert out["da_price"][10] == 15.0

    def test_run_of_gaps_uses_nearest_observed(self):
        v = np.arange(48.0)
        v[10:13] = np.nan
        out = normalize_calendar(raw_panel(da_price=v))
        np.testing.assert_array_equal(out["da_price"][10:13], 0.5 * (9.0 + 13.0))

    def test_duplicate_pair_averaged(self):
        v = np.ones(48)
        v[2] = 30.0
        panel = HourlyPanel(dt.date(2021, 10, 31), 2, {"da_price": v}, {2: {"da_price": 34.0}})
        out = normalize_calendar(panel)
        assert out["da_price"][2] == 32.0
        assert out.is_normalized

    def test_weekend_gas_takes_friday_close(self):
        # 2021-01-08 is a Friday
        gas = np.full(72, np.nan)
        gas[:24] = 25.4
        out = normalize_calendar(raw_panel(3, da_price=np.ones(72), gas_price=gas))
        np.testing.assert_array_equal(out["gas_price"], 25.4)

    def test_daily_series_constant_within_day(self):
        gas = np.full(48, np.nan)
        gas[0], gas[30] = 20.0, 21.0
        out = normalize_calendar(raw_panel(da_price=np.ones(48), gas_price=gas))
        m = out.matrix("gas_price")
        assert (m == m[:, :1]).all()
        assert m[1, 0] == 21.0

    def test_partial_falls_back_to_day_ahead(self):
        partial = np.full(48, np.nan)
        partial[:5] = 7.0
        da = np.arange(48.0)
        out = normalize_calendar(raw_panel(da_price=da, id_partial=partial))
        np.testing.assert_array_equal(out["id_partial"][5:], da[5:])
        np.testing.assert_array_equal(out["id_partial"][:5], 7.0)

    def test_gap_at_boundary(self):
        v = np.ones(48)
        v[0] = np.nan
        with pytest.raises(GapAtBoundaryError):
            normalize_calendar(raw_panel(da_price=v))

    def test_first_day_without_quote(self):
        gas = np.full(48, np.nan)
        gas[30] = 1.0
        with pytest.raises(GapAtBoundaryError):
            normalize_calendar(raw_panel(da_price=np.ones(48), gas_price=gas))

    def test_all_series_missing_day(self):
        v = np.ones(72)
        w = np.ones(72)
        v[24:48] = w[24:48] = np.nan
        with pytest.raises(MissingDayError):
            normalize_calendar(raw_panel(3, da_price=v, load_fc=w))

    def test_no_missing_values_remain(self, rng):
        v = rng.normal(size=24 * 5)
        holes = rng.choice(np.arange(1, v.size - 1), 20, replace=False)
        v[holes] = np.nan
        out = normalize_calendar(raw_panel(5, da_price=v))
        assert out.is_normalized
        assert out["da_price"].size == 24 * 5

    def test_normalized_panel_unchanged(self, synth_panel):
        out = normalize_calendar(synth_panel)
        for name in synth_panel.names:
            np.testing.assert_array_equal(out[name], synth_panel[name])


class TestPanel:
    def test_addressing(self):
        v = np.arange(48.0)
        panel = raw_panel(da_price=v)
        # t = 24 * d + (h - 1) with 0-based day index
        assert panel.matrix("da_price")[1, 4] == v[24 + 4]
        assert panel.weekday(0) == 4
        assert panel.day_index(dt.date(2021, 1, 9)) == 1

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            raw_panel(da_price=np.ones(47))

    def test_csv_round_trip(self, tmp_path, synth_panel):
        part = synth_panel.slice_days(0, 10)
        part.to_csv(tmp_path / "p.csv")
        back = load_market_csv(tmp_path / "p.csv")
        assert back.start_date == part.start_date
        for name in part.names:
            np.testing.assert_allclose(back[name], part[name], rtol=1e-9)


class TestNpit:
    def test_spec_example(self):
        m = npit_fit([1, 2, 3, 4])
        assert m.transform(2) == pytest.approx(ndtri(0.375), abs=1e-12)
        assert m.transform(2) == pytest.approx(-0.31863936396437, abs=1e-12)

    def test_median_maps_to_zero(self):
        m = npit_fit([5, 1, 3])
        assert m.transform(3) == pytest.approx(0.0, abs=1e-15)

    def test_below_minimum_is_clamped(self):
        m = npit_fit([1, 2, 3, 4])
        assert m.clamp_eps == 1 / 8
        assert m.transform(-1e9) == pytest.approx(ndtri(1 / 8))
        assert m.transform(1e9) == pytest.approx(ndtri(7 / 8))

    def test_inverse_at_zero_is_median(self):
        assert npit_fit([1, 2, 3, 4]).inverse(0.0) == pytest.approx(2.5)
        assert npit_fit([1, 2, 9]).inverse(0.0) == pytest.approx(2.0)

    def test_ties_use_mid_rank(self):
        m = npit_fit([1, 2, 2, 3])
        assert m.transform(2) == pytest.approx(0.0, abs=1e-15)

    def test_round_trip_in_sample(self, rng):
        x = rng.standard_t(3, size=500) * 20 + 50
        m = npit_fit(x)
        np.testing.assert_allclose(m.inverse(m.transform(x)), x, atol=1e-9)

    def test_ordering_preserved(self, rng):
        m = npit_fit(rng.normal(size=200))
        q = np.sort(rng.normal(scale=1.2, size=100))
        assert (np.diff(m.transform(q)) >= 0).all()

    def test_finite_everywhere(self):
        m = npit_fit([1.0, 2.0, 5.0])
        assert np.isfinite(m.transform(np.array([-np.inf, -1e300, 0, 1e300, np.inf]))).all()

    def test_scalar_in_scalar_out(self):
        m = npit_fit([1.0, 2.0])
        assert isinstance(npit_transform(m, 1.5), float)
        assert isinstance(npit_inverse(m, 0.1), float)

    @pytest.mark.parametrize("bad", [[1.0], [3.0, 3.0, 3.0], [1.0, np.nan]])
    def test_degenerate(self, bad):
        with pytest.raises(DegenerateSampleError):
            npit_fit(bad)

    def test_clamp_range(self):
        with pytest.raises(ValueError):
            npit_fit([1, 2], clamp_eps=0.5)

    def test_inverse_normal_against_high_precision(self):
        mpmath.mp.dps = 40
        ps = np.concatenate([[1e-7, 1e-6, 1e-4, 0.01, 0.2, 0.5, 0.77, 0.99, 1 - 1e-5, 1 - 1e-7]],
                            axis=None)
        for p in ps:
            ref = float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(float(p)) - 1))
            assert abs(ndtri(p) - ref) <= 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=2, max_size=60, unique=True),
           st.lists(st.floats(-2e4, 2e4, allow_nan=False), min_size=2, max_size=20))
    def test_monotone_property(self, sample, queries):
        m = npit_fit(sample)
        q = np.sort(queries)
        assert (np.diff(m.transform(q)) >= 0).all()
        inside = q[(q > min(sample)) & (q < max(sample))]
        y = m.transform(inside)
        np.testing.assert_allclose(m.inverse(y), inside, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(sample).max()))
