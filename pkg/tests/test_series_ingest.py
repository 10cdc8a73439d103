from __future__ import annotations

import datetime as dt
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsynth import fixtures as fx
from gridsynth import rng as rng_mod
from gridsynth.errors import SeriesError
from gridsynth.series_ingest import (
    HOURS_PER_YEAR,
    RawSeries,
    aggregate_by_type,
    availability_by_type,
    calendar_years,
    canonicalize_year,
    compute_scaling_factors,
    fill_gaps,
    monday_offset,
    read_raw_csv,
    synthetic_nuclear_profile,
    write_raw_csv,
)


def raw(values, start="2016-01-01T00"):
    values = np.asarray(values, dtype=float)
    return RawSeries(np.datetime64(start, "h") + np.arange(len(values)), values, "X")


def test_single_gap_midpoint():
    np.testing.assert_array_equal(fill_gaps(raw([1, np.nan, 3])).values, [1, 2, 3])


def test_two_step_gap_linear():
    np.testing.assert_allclose(fill_gaps(raw([0, np.nan, np.nan, 3])).values, [0, 1, 2, 3])


def test_no_gap_unchanged():
    s = raw([4.0, 5.0, 6.0])
    np.testing.assert_array_equal(fill_gaps(s).values, s.values)


def test_long_gap_rejected():
    with pytest.raises(SeriesError, match="exceeds"):
        fill_gaps(raw([1.0] + [np.nan] * 30 + [2.0]), max_gap=24)
    assert np.isfinite(fill_gaps(raw([1.0] + [np.nan] * 30 + [2.0]), max_gap=30).values).all()


def test_missing_endpoint_rejected():
    with pytest.raises(SeriesError, match="endpoint"):
        fill_gaps(raw([np.nan, 1.0, 2.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40), st.data())
def test_filled_values_lie_between_neighbours(vals, data):
    vals = np.array(vals)
    k = data.draw(st.integers(1, max(1, len(vals) - 2)))
    holes = vals.copy()
    holes[k : k + 1] = np.nan
    if k == len(vals) - 1:
        return
    out = fill_gaps(raw(holes)).values
    lo, hi = sorted((vals[k - 1], vals[k + 1]))
    assert lo - 1e-9 <= out[k] <= hi + 1e-9


def test_monday_offsets():
    assert monday_offset(2016) == 3  # Jan 1 2016 was a Friday
    assert monday_offset(2018) == 0  # Monday
    for year in range(2000, 2030):
        first = dt.date(year, 1, 1) + dt.timedelta(days=monday_offset(year))
        assert first.weekday() == 0


def test_canonicalize_monday_year_is_pure_truncation():
    vals = np.arange(8760.0)
    out = canonicalize_year(raw(vals, "2018-01-01T00"), 2018, base_power=1.0)
    np.testing.assert_array_equal(out.values, vals[:HOURS_PER_YEAR])


def test_canonicalize_2016_rotates_72_hours():
    out = canonicalize_year(raw(np.arange(8784.0)), 2016, base_power=1.0)
    assert out.values[0] == 72.0
    assert out.values[-1] == 71.0
    assert len(out.values) == HOURS_PER_YEAR


def test_canonicalize_constant_and_per_unit():
    out = canonicalize_year(raw(np.full(8784, 250.0)), 2016)
    np.testing.assert_array_equal(out.values, 2.5)


def test_canonicalize_short_year():
    with pytest.raises(SeriesError, match="need at least"):
        canonicalize_year(raw(np.ones(100)), 2016)


def test_canonicalize_refuses_gaps():
    v = np.ones(8784)
    v[10] = np.nan
    with pytest.raises(SeriesError, match="gaps"):
        canonicalize_year(raw(v), 2016)


def test_calendar_years():
    s = fx.historical_raw("AA", 2015)
    assert calendar_years(s) == [2015]
    partial = RawSeries(s.timestamps[24:], s.values[24:], "AA")
    assert calendar_years(partial) == []


@pytest.mark.parametrize(
    "prod, exp, load, factor",
    [(100.0, 20.0, 100.0, 0.8), (50.0, 0.0, 50.0, 1.0), (80.0, -20.0, 50.0, 2.0)],
)
def test_scaling_factors(prod, exp, load, factor):
    rec = compute_scaling_factors({"X": prod}, {"X": exp}, {"X": load})["X"]
    assert rec.scaling_factor == pytest.approx(factor)


def test_scaling_factor_errors():
    with pytest.raises(SeriesError):
        compute_scaling_factors({"X": 10.0}, {"X": 20.0}, {"X": 5.0})
    with pytest.raises(SeriesError):
        compute_scaling_factors({"X": 10.0}, {}, {"X": 0.0})


def test_aggregate_by_type():
    out = aggregate_by_type({"a": np.ones(5), "b": np.ones(5), "c": np.full(5, 3.0)}, {"a": "coal", "b": "coal", "c": "weird"}, 5)
    np.testing.assert_array_equal(out["coal"], 2.0)
    np.testing.assert_array_equal(out["other"], 3.0)
    np.testing.assert_array_equal(out["nuclear"], 0.0)


def test_availability_by_type():
    assert availability_by_type({"coal": np.full(10, 3.0)}, {"coal": 6.0}) == {"coal": 0.5}


def test_synthetic_nuclear_profile():
    prof = synthetic_nuclear_profile(10.0, rng_mod.stream(1, "n"))
    assert prof.max() == 10.0 and prof.min() == 0.0
    off = np.flatnonzero(prof == 0)
    assert np.all(np.diff(off) == 1)  # a single contiguous window
    twin = synthetic_nuclear_profile(10.0, rng_mod.stream(1, "n"), twin_reactor=True)
    assert twin.min() == 5.0


def test_csv_round_trip_with_gaps():
    s = raw([1.5, np.nan, 2.25])
    back = read_raw_csv(io.StringIO(write_raw_csv(s)), "X")
    np.testing.assert_array_equal(back.timestamps, s.timestamps)
    np.testing.assert_array_equal(np.isnan(back.values), [False, True, False])


def test_csv_missing_hours_become_gaps():
    text = "t,v\n2016-01-01T00:00Z,1\n2016-01-01T03:00Z,4\n"
    s = read_raw_csv(io.StringIO(text))
    assert len(s) == 4 and np.isnan(s.values[1:3]).all()


def test_csv_bad_timestamps():
    with pytest.raises(SeriesError):
        read_raw_csv(io.StringIO("t,v\nyesterday,1\n"))
