"""Deterministic small inputs: a 30-bus two-country grid and constructed historical years.

These make every stage runnable without external data (tests, demos, the
``generate`` command on a fresh checkout).
"""

from __future__ import annotations

import datetime as dt
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import rng as rng_mod
from .grid_model import Bus, Generator, Line, Network, network_to_json, normalize_weights
from .series_ingest import HOURS_PER_YEAR, RawSeries, synthetic_nuclear_profile, write_raw_csv
from .tables import Table

COUNTRIES = ("AA", "BB")
N_BUSES = 30
FIXTURE_SEED = 20160104

# (id, bus, type, rated pu, availability, ramp pu/h)
_GENERATORS = (
    ("G01", "B03", "nuclear", 6.0, 0.9, None),
    ("G02", "B05", "coal", 6.0, 0.5, 2.0),
    ("G03", "B12", "coal", 6.0, 0.5, 2.0),
    ("G04", "B20", "coal", 6.0, 0.5, 2.0),
    ("G05", "B08", "gas_oil", 5.0, 0.4, None),
    ("G06", "B24", "gas_oil", 5.0, 0.4, None),
    ("G07", "B15", "hydro_storage", 4.0, 0.3, None),
    ("G08", "B28", "hydro_storage", 4.0, 0.3, None),
    ("G09", "B18", "hydro_river", 3.0, 0.6, None),
    ("G10", "B10", "other", 2.0, 0.5, None),
)


def bus_id(k: int) -> str:
    return f"B{k:02d}"


def _edges() -> list[tuple[int, int]]:
    """Two 15-bus meshed areas joined by three tie lines."""
    edges = []
    for off in (0, 15):
        ring = [(off + i, off + (i + 1) % 15) for i in range(15)]
        chords = [(off + i, off + (i + 5) % 15) for i in range(0, 15, 3)]
        edges += ring + chords
    edges += [(2, 17), (7, 22), (12, 27)]
    return edges


def reference_grid(limit_scale: float = 1.0, seed: int = FIXTURE_SEED) -> Network:
    """30 buses, 2 countries, 10 generators (1 nuclear, 3 ramp-limited coal).

    ``limit_scale`` multiplies every thermal limit; values well below 1 give a
    congested variant.
    """
    rng = rng_mod.stream(seed, "grid")
    buses = []
    for k in range(N_BUSES):
        country = COUNTRIES[0] if k < 15 else COUNTRIES[1]
        is_load = k % 3 != 2
        weight = float(rng.uniform(0.5, 2.0)) if is_load else 0.0
        buses.append(Bus(bus_id(k + 1), country, weight, is_load))
    lines = []
    for j, (a, b) in enumerate(_edges()):
        sus = float(rng.uniform(5.0, 20.0))
        limit = float(rng.uniform(4.0, 8.0)) * limit_scale
        lines.append(Line(f"L{j + 1:02d}", bus_id(a + 1), bus_id(b + 1), sus, limit))
    gens = tuple(Generator(*spec) for spec in _GENERATORS)
    return normalize_weights(Network(tuple(buses), tuple(lines), gens))


def congested_grid(seed: int = FIXTURE_SEED) -> Network:
    return reference_grid(limit_scale=0.35, seed=seed)


def constant_load_grid() -> Network:
    """Five buses, three dispatchable units (one coal), for small exact checks."""
    buses = tuple(Bus(bus_id(k), "AA", w, w > 0) for k, w in zip(range(1, 6), (1.0, 2.0, 0.0, 1.5, 1.0)))
    pairs = [(1, 2), (2, 3), (3, 4), (4, 5), (5, 1), (2, 4)]
    sus = (10.0, 6.0, 12.0, 8.0, 5.0, 9.0)
    lines = tuple(
        Line(f"L{j + 1}", bus_id(a), bus_id(b), s, 1.0) for j, ((a, b), s) in enumerate(zip(pairs, sus))
    )
    gens = (
        Generator("G1", "B01", "coal", 4.0, 0.5, 2.0),
        Generator("G2", "B03", "gas_oil", 3.0, 0.4, None),
        Generator("G3", "B05", "hydro_storage", 2.0, 0.5, None),
    )
    return normalize_weights(Network(buses, lines, gens))


def nuclear_table(net: Network, n_steps: int = HOURS_PER_YEAR, seed: int = FIXTURE_SEED, year=0) -> Table:
    cols, vals = [], []
    for g in net.nuclear:
        prof = synthetic_nuclear_profile(
            g.rated_power, rng_mod.stream(seed, "nuclear", g.id, year), HOURS_PER_YEAR, twin_reactor=True
        )
        cols.append(g.id)
        vals.append(np.resize(prof, n_steps))
    return Table(tuple(cols), np.column_stack(vals) if vals else np.zeros((n_steps, 0)))


def country_targets(net: Network, nuclear: Table, exports: dict[str, float] | None = None) -> dict[str, float]:
    """Mean national load that balances expected production minus export."""
    exports = exports or {}
    out = {c: 0.0 for c in net.countries}
    for g in net.generators:
        c = net.gen_country(g)
        if g.dispatchable:
            out[c] += g.availability * g.rated_power
        else:
            out[c] += float(nuclear.column(g.id).mean())
    return {c: v - exports.get(c, 0.0) for c, v in out.items()}


def load_shape(n_steps: int, rng: np.random.Generator, level: float = 1.0) -> np.ndarray:
    """One year of hourly national load with annual, weekly and daily cycles plus AR(1) noise."""
    t = np.arange(n_steps, dtype=float)
    annual = 0.15 * rng.uniform(0.7, 1.3) * np.cos(2 * np.pi * t / HOURS_PER_YEAR + rng.normal(0, 0.2))
    hour = t % 24
    daily = 0.12 * rng.uniform(0.8, 1.2) * (
        np.exp(-((hour - 11.0) ** 2) / 18.0) + 0.8 * np.exp(-((hour - 19.0) ** 2) / 6.0) - 0.55
    )
    weekday = (t // 24) % 7
    weekly = np.where(weekday >= 5, -0.08 * rng.uniform(0.7, 1.3), 0.02)
    noise = lfilter([1.0], [1.0, -0.97], rng.normal(0.0, 0.01, n_steps))
    return level * (1.0 + annual + daily + weekly + noise)


def historical_years(
    country: str,
    n_years: int = 4,
    level_mw: float = 2000.0,
    seed: int = FIXTURE_SEED,
    n_steps: int = HOURS_PER_YEAR,
) -> list[np.ndarray]:
    """Constructed canonical "historical" years (per-unit of 100 MW)."""
    return [
        load_shape(n_steps, rng_mod.stream(seed, "history", country, y), level_mw / 100.0)
        for y in range(n_years)
    ]


def historical_raw(country: str, year: int, level_mw: float = 2000.0, seed: int = FIXTURE_SEED) -> RawSeries:
    """A full calendar year of hourly MW values (dated, for the ingest path)."""
    start = np.datetime64(f"{year:04d}-01-01T00", "h")
    n = (dt.date(year + 1, 1, 1) - dt.date(year, 1, 1)).days * 24
    vals = load_shape(n, rng_mod.stream(seed, "raw", country, year), level_mw)
    return RawSeries(start + np.arange(n), vals, country)


def scaled(net: Network, factor: float) -> Network:
    """Copy of ``net`` with all thermal limits multiplied by ``factor``."""
    return replace(net, lines=tuple(replace(ln, thermal_limit=ln.thermal_limit * factor) for ln in net.lines))


DEMO_CONFIG = """\
[paths]
network = network.json
history = history
output = out

[run]
seed = {seed}
years = {years}
replicas = {replicas}
rho_target = 0.8
noise_scale = 1.0

[exports]
AA = 100
BB = -100
"""


def write_demo_inputs(
    directory,
    history_years=(2013, 2014, 2015, 2016),
    years=(2016,),
    replicas: int = 1,
    seed: int = 1,
    limit_scale: float = 1.0,
) -> Path:
    """Write a network, dated MW histories and a config file; returns the config path."""
    directory = Path(directory)
    (directory / "history" / "loads").mkdir(parents=True, exist_ok=True)
    (directory / "history" / "nuclear").mkdir(parents=True, exist_ok=True)
    net = reference_grid(limit_scale)
    (directory / "network.json").write_text(network_to_json(net))
    for c in COUNTRIES:
        parts = [historical_raw(c, y) for y in history_years]
        raw = RawSeries(
            np.concatenate([r.timestamps for r in parts]), np.concatenate([r.values for r in parts]), c
        )
        (directory / "history" / "loads" / f"{c}.csv").write_text(write_raw_csv(raw))
    for g in net.nuclear:
        parts = []
        for y in range(min(years), max(years) + 1):
            n = (dt.date(y + 1, 1, 1) - dt.date(y, 1, 1)).days * 24
            prof = synthetic_nuclear_profile(g.rated_power, rng_mod.stream(FIXTURE_SEED, "nuclear", g.id, y), n, True)
            start = np.datetime64(f"{y:04d}-01-01T00", "h")
            parts.append(RawSeries(start + np.arange(n), prof * net.base_power, g.id))
        raw = RawSeries(
            np.concatenate([r.timestamps for r in parts]), np.concatenate([r.values for r in parts]), g.id
        )
        (directory / "history" / "nuclear" / f"{g.id}.csv").write_text(write_raw_csv(raw))
    cfg = directory / "config.ini"
    cfg.write_text(DEMO_CONFIG.format(seed=seed, years=" ".join(map(str, years)), replicas=replicas))
    return cfg
