"""Cleaning and canonicalization of historical hourly series.

Raw inputs are hourly CSV files in MW (national loads, nuclear units, typed
generation, border flows). They are gap-filled, cut to a 364-day year that
starts on a Monday, and converted to per-unit.
"""

from __future__ import annotations

import datetime as dt
import io
import logging
from dataclasses import dataclass, field
from os import PathLike
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import SeriesError
from .grid_model import BASE_POWER_MW, GEN_TYPES, normalize_gen_type

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 364
HOURS_PER_YEAR = DAYS_PER_YEAR * 24  # 8736
DEFAULT_MAX_GAP = 24


@dataclass(frozen=True)
class RawSeries:
    timestamps: np.ndarray  # datetime64[h], strictly increasing, hourly
    values: np.ndarray  # MW, NaN marks a gap
    region: str = ""

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[h]")
        vals = np.asarray(self.values, dtype=float)
        if ts.shape != vals.shape or ts.ndim != 1:
            raise SeriesError(f"{self.region}: timestamps and values must be 1-D of equal length")
        if len(ts) > 1 and np.any(np.diff(ts).astype(np.int64) != 1):
            raise SeriesError(f"{self.region}: timestamps must be strictly increasing with hourly spacing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class AnnualSeries:
    values: np.ndarray
    region: str = ""
    year: int | None = None
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (HOURS_PER_YEAR,):
            raise SeriesError(f"annual series must have {HOURS_PER_YEAR} steps, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise SeriesError(f"{self.region}: annual series contains missing values")
        object.__setattr__(self, "values", vals)

    @property
    def label(self) -> str:
        return self.region if self.year is None else f"{self.region}_{self.year}"

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True)
class BalanceRecord:
    country: str
    production: float
    export: float
    raw_load: float

    @property
    def scaling_factor(self) -> float:
        return (self.production - self.export) / self.raw_load


def _gap_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive True entries."""
    if not mask.any():
        return []
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2], edges[1::2]))


def fill_gaps(s: RawSeries, max_gap: int = DEFAULT_MAX_GAP) -> RawSeries:
    """Linearly interpolate runs of missing values no longer than ``max_gap`` steps."""
    gaps = ~np.isfinite(s.values)
    if not gaps.any():
        return s
    if gaps[0] or gaps[-1]:
        raise SeriesError(f"{s.region}: series endpoint is missing, cannot interpolate")
    for start, stop in _gap_runs(gaps):
        if stop - start > max_gap:
            raise SeriesError(
                f"{s.region}: gap of {stop - start} steps at {s.timestamps[start]} "
                f"exceeds the maximum of {max_gap}"
            )
    x = np.arange(len(s.values))
    out = s.values.copy()
    out[gaps] = np.interp(x[gaps], x[~gaps], s.values[~gaps])
    return RawSeries(s.timestamps, out, s.region)


def monday_offset(year: int) -> int:
    """Days from January 1 to the first Monday of ``year`` (0 when Jan 1 is a Monday)."""
    return (7 - dt.date(year, 1, 1).weekday()) % 7


def canonicalize_year(
    s: RawSeries,
    year: int,
    base_power: float = BASE_POWER_MW,
) -> AnnualSeries:
    """Cut one calendar year to 364 days, rotate it to start on a Monday, convert to per-unit.

    The year is truncated at the end (Dec 30/31 dropped), then rotated left by
    whole days so that the first entry is the first Monday at 00:00.
    """
    start = np.datetime64(f"{year:04d}-01-01T00", "h")
    stop = np.datetime64(f"{year + 1:04d}-01-01T00", "h")
    sel = (s.timestamps >= start) & (s.timestamps < stop)
    ts, vals = s.timestamps[sel], s.values[sel]
    if len(vals) < HOURS_PER_YEAR:
        raise SeriesError(
            f"{s.region}: year {year} has {len(vals)} hourly steps, need at least {HOURS_PER_YEAR}"
        )
    if ts[0] != start:
        raise SeriesError(f"{s.region}: year {year} does not start on January 1 00:00")
    vals = vals[:HOURS_PER_YEAR]
    if not np.all(np.isfinite(vals)):
        raise SeriesError(f"{s.region}: year {year} still has gaps, run fill_gaps first")
    shift = 24 * monday_offset(year)
    return AnnualSeries(np.roll(vals, -shift) / base_power, s.region, year)


def calendar_years(s: RawSeries) -> list[int]:
    """Calendar years fully covered by ``s``."""
    years = sorted({int(str(t)[:4]) for t in s.timestamps[[0, -1]]})
    out = []
    for y in range(years[0], years[-1] + 1):
        start = np.datetime64(f"{y:04d}-01-01T00", "h")
        end = np.datetime64(f"{y:04d}-12-31T23", "h")
        if s.timestamps[0] <= start and s.timestamps[-1] >= end:
            out.append(y)
    return out


def compute_scaling_factors(
    production: Mapping[str, float],
    exports: Mapping[str, float],
    raw_loads: Mapping[str, float],
) -> dict[str, BalanceRecord]:
    """Per-country load scaling so that production - load - export vanishes in the annual mean.

    ``exports`` are signed (positive = net export); countries missing from it
    are taken as balanced.
    """
    out = {}
    for country, load in raw_loads.items():
        if not load > 0:
            raise SeriesError(f"{country}: raw load must be positive, got {load}")
        if country not in production:
            raise SeriesError(f"{country}: no production figure")
        rec = BalanceRecord(country, float(production[country]), float(exports.get(country, 0.0)), float(load))
        if not rec.scaling_factor > 0:
            raise SeriesError(
                f"{country}: production {rec.production:.4g} does not exceed export {rec.export:.4g}"
            )
        out[country] = rec
    return out


def aggregate_by_type(
    units: Mapping[str, AnnualSeries | np.ndarray],
    type_map: Mapping[str, str],
    n_steps: int = HOURS_PER_YEAR,
) -> dict[str, np.ndarray]:
    """Sum unit series per generator type; every type of the closed vocabulary is present."""
    out = {t: np.zeros(n_steps) for t in GEN_TYPES}
    for unit, series in units.items():
        if unit not in type_map:
            raise SeriesError(f"unit {unit!r} has no type")
        vals = series.values if isinstance(series, AnnualSeries) else np.asarray(series, float)
        out[normalize_gen_type(type_map[unit])] = out[normalize_gen_type(type_map[unit])] + vals
    return out


def availability_by_type(
    type_series: Mapping[str, np.ndarray], rated_by_type: Mapping[str, float]
) -> dict[str, float]:
    """Availability factor per type: annual mean output over installed rated power (clipped to [0, 1])."""
    out = {}
    for t, series in type_series.items():
        rated = rated_by_type.get(t, 0.0)
        if rated > 0:
            out[t] = float(np.clip(np.mean(series) / rated, 0.0, 1.0))
    return out


def synthetic_nuclear_profile(
    rated_power: float,
    rng: np.random.Generator,
    n_steps: int = HOURS_PER_YEAR,
    twin_reactor: bool = False,
) -> np.ndarray:
    """Rated output with one contiguous maintenance window (zero, or half power for twin units).

    Used only when historical unit data is unavailable.
    """
    length = int(rng.integers(3, 9)) * 168
    length = min(length, n_steps // 2)
    # maintenance centred on late spring / summer
    centre = int(rng.uniform(0.3, 0.7) * n_steps)
    start = max(0, min(n_steps - length, centre - length // 2))
    out = np.full(n_steps, float(rated_power))
    out[start : start + length] = 0.5 * rated_power if twin_reactor else 0.0
    return out


# ---------------------------------------------------------------------------
# CSV I/O


def read_raw_csv(source: str | PathLike | io.TextIOBase, region: str = "") -> RawSeries:
    """Read a two-column CSV (ISO-8601 hourly timestamp, MW value; blank = gap).

    Hours absent from the file are inserted as gaps.
    """
    try:
        df = pd.read_csv(source, header=0, skip_blank_lines=True)
    except (ValueError, OSError, pd.errors.ParserError) as exc:
        raise SeriesError(f"{region}: unreadable series file: {exc}") from exc
    if df.shape[1] < 2:
        raise SeriesError(f"{region}: expected a timestamp column and a value column")
    try:
        ts = pd.to_datetime(df.iloc[:, 0], utc=True).dt.tz_localize(None)
    except (ValueError, TypeError) as exc:
        raise SeriesError(f"{region}: bad timestamps: {exc}") from exc
    vals = pd.to_numeric(df.iloc[:, 1], errors="coerce").to_numpy(dtype=float)
    ts = ts.to_numpy().astype("datetime64[h]")
    if len(ts) == 0:
        raise SeriesError(f"{region}: empty series")
    if np.any(np.diff(ts).astype(np.int64) <= 0):
        raise SeriesError(f"{region}: timestamps must be strictly increasing")
    full = np.arange(ts[0], ts[-1] + np.timedelta64(1, "h"), dtype="datetime64[h]")
    if len(full) != len(ts):
        out = np.full(len(full), np.nan)
        out[(ts - ts[0]).astype(np.int64)] = vals
        vals = out
    return RawSeries(full, vals, region)


def write_raw_csv(s: RawSeries) -> str:
    stamps = pd.to_datetime(s.timestamps).strftime("%Y-%m-%dT%H:%M:%SZ")
    df = pd.DataFrame({"timestamp": stamps, s.region or "value": s.values})
    return df.to_csv(index=False, lineterminator="\n", float_format="%.12g", na_rep="")
