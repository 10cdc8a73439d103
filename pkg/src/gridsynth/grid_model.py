"""Transmission network model: parsing, preprocessing and linear-algebra views.

The network file follows the PowerModels/MatPower JSON layout (objects keyed
``bus``, ``branch``, ``gen`` and ``load``), with a few optional extra fields
carried by the European dataset (``country``, generator ``type`` and
``availability``, load ``weight``). All quantities are per-unit on
``baseMVA`` (100 MW).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import NetworkError

logger = logging.getLogger(__name__)

GEN_TYPES = (
    "nuclear",
    "coal",
    "gas_oil",
    "hydro_storage",
    "hydro_river",
    "hydro_unspecified",
    "other",
)
BASE_POWER_MW = 100.0
DEFAULT_COAL_RAMP = 2.0  # pu per hour, i.e. 200 MW/h
WEIGHT_TOL = 1e-9

_TYPE_ALIASES = {
    "nuclear": "nuclear",
    "coal": "coal",
    "hard_coal": "coal",
    "lignite": "coal",
    "brown_coal": "coal",
    "fossil_hard_coal": "coal",
    "fossil_brown_coal_lignite": "coal",
    "fossil_brown_coal/lignite": "coal",
    "gas": "gas_oil",
    "oil": "gas_oil",
    "gas_oil": "gas_oil",
    "gas_and_oil": "gas_oil",
    "natural_gas": "gas_oil",
    "fossil_gas": "gas_oil",
    "fossil_oil": "gas_oil",
    "fossil_coal_derived_gas": "gas_oil",
    "ccgt": "gas_oil",
    "ocgt": "gas_oil",
    "diesel": "gas_oil",
    "hydro_storage": "hydro_storage",
    "hydro_water_reservoir": "hydro_storage",
    "hydro_pumped_storage": "hydro_storage",
    "pumped_storage": "hydro_storage",
    "reservoir": "hydro_storage",
    "hydro_river": "hydro_river",
    "run_of_river": "hydro_river",
    "hydro_run_of_river": "hydro_river",
    "hydro_run_of_river_and_poundage": "hydro_river",
    "ror": "hydro_river",
    "hydro": "hydro_unspecified",
    "hydro_unspecified": "hydro_unspecified",
}


def normalize_gen_type(raw) -> str:
    """Map a free-form generator type onto the closed vocabulary."""
    if raw is None:
        return "other"
    key = str(raw).strip().lower().replace("-", "_").replace(" ", "_")
    return _TYPE_ALIASES.get(key, "other")


@dataclass(frozen=True)
class Bus:
    id: str
    country: str | None = None
    load_weight: float = 0.0
    is_load: bool = False


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    susceptance: float
    thermal_limit: float


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    gen_type: str
    rated_power: float
    availability: float
    ramp_limit: float | None = None
    country: str | None = None

    @property
    def dispatchable(self) -> bool:
        return self.gen_type != "nuclear"


class GridMatrices(NamedTuple):
    incidence: sp.csc_matrix  # buses x lines
    susceptance: sp.dia_matrix  # lines x lines
    thermal: np.ndarray  # lines


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    base_power: float = BASE_POWER_MW
    # per-country weight sums observed before normalization
    raw_weight_sums: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        _check_network(self)

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def line_index(self) -> dict[str, int]:
        return {ln.id: i for i, ln in enumerate(self.lines)}

    @cached_property
    def gen_index(self) -> dict[str, int]:
        return {g.id: i for i, g in enumerate(self.generators)}

    @property
    def load_buses(self) -> tuple[Bus, ...]:
        return tuple(b for b in self.buses if b.is_load)

    @property
    def dispatchable(self) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if g.dispatchable)

    @property
    def nuclear(self) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if not g.dispatchable)

    @property
    def countries(self) -> list[str]:
        return sorted({b.country for b in self.buses if b.country is not None})

    def gen_country(self, gen: Generator) -> str | None:
        if gen.country is not None:
            return gen.country
        return self.buses[self.bus_index[gen.bus]].country

    def __repr__(self):
        return (
            f"Network(buses={len(self.buses)}, lines={len(self.lines)}, "
            f"generators={len(self.generators)})"
        )


def _check_network(net: Network) -> None:
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate bus identifiers")
    known = set(ids)
    for ln in net.lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                raise NetworkError(f"line {ln.id!r} references unknown bus {end!r}")
        if ln.from_bus == ln.to_bus:
            raise NetworkError(f"line {ln.id!r} is a self-loop on bus {ln.from_bus!r}")
        if not ln.susceptance > 0:
            raise NetworkError(f"line {ln.id!r} has non-positive susceptance {ln.susceptance}")
        if not ln.thermal_limit > 0:
            raise NetworkError(f"line {ln.id!r} has non-positive thermal limit {ln.thermal_limit}")
    for g in net.generators:
        if g.bus not in known:
            raise NetworkError(f"generator {g.id!r} references unknown bus {g.bus!r}")
        if not g.rated_power > 0:
            raise NetworkError(f"generator {g.id!r} has non-positive rated power")
        if not 0.0 <= g.availability <= 1.0:
            raise NetworkError(f"generator {g.id!r} availability {g.availability} outside [0, 1]")
        if g.gen_type not in GEN_TYPES:
            raise NetworkError(f"generator {g.id!r} has unknown type {g.gen_type!r}")
        if g.ramp_limit is not None and not g.ramp_limit > 0:
            raise NetworkError(f"generator {g.id!r} has non-positive ramp limit")
    for b in net.buses:
        if b.load_weight < 0:
            raise NetworkError(f"bus {b.id!r} has negative load weight")


# ---------------------------------------------------------------------------
# parsing


def _first(rec: Mapping, keys: Iterable[str], default=None):
    for k in keys:
        if k in rec and rec[k] is not None:
            return rec[k]
    return default


def _label(value) -> str:
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    return str(value)


def _records(data: Mapping, key: str) -> list[tuple[str, Mapping]]:
    block = data.get(key, {})
    if isinstance(block, list):
        items = [(str(i + 1), rec) for i, rec in enumerate(block)]
    elif isinstance(block, Mapping):
        items = [(str(k), rec) for k, rec in block.items()]
    else:
        raise NetworkError(f"'{key}' must be an object or a list")
    for k, rec in items:
        if not isinstance(rec, Mapping):
            raise NetworkError(f"{key} record {k!r} is not an object")
    return items


def parse_network(
    text: str,
    *,
    coal_ramp: float | None = DEFAULT_COAL_RAMP,
    default_availability: float | None = None,
) -> Network:
    """Build a validated :class:`Network` from a PowerModels-style JSON document.

    Out-of-service elements are skipped and unknown fields ignored. Load weights
    are taken from ``weight`` when present, otherwise from the nominal ``pd``,
    and renormalized per country. A disconnected graph is reduced to its largest
    connected component.
    """
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise NetworkError(f"malformed network document: {exc}") from exc
    if not isinstance(data, Mapping):
        raise NetworkError("network document must be a JSON object")
    for key in ("bus", "branch", "gen"):
        if key not in data:
            raise NetworkError(f"network document lacks '{key}' records")

    base = float(data.get("baseMVA", BASE_POWER_MW))
    scale = 1.0 if data.get("per_unit", True) else 1.0 / base

    buses: dict[str, dict] = {}
    for key, rec in _records(data, "bus"):
        if int(rec.get("bus_type", 1)) == 4:
            continue
        bid = _label(_first(rec, ("bus_i", "index"), key))
        country = rec.get("country")
        buses[bid] = {"country": str(country) if country else None, "weight": 0.0, "is_load": False}

    lines = []
    for key, rec in _records(data, "branch"):
        if int(rec.get("br_status", 1)) == 0:
            continue
        f, t = _label(_first(rec, ("f_bus", "from_bus"))), _label(_first(rec, ("t_bus", "to_bus")))
        if "susceptance" in rec:
            b = float(rec["susceptance"])
        else:
            x = rec.get("br_x")
            if x is None:
                raise NetworkError(f"branch {key!r} has neither br_x nor susceptance")
            x = float(x)
            b = 1.0 / x if x != 0 else math.inf
        if not math.isfinite(b):
            raise NetworkError(f"branch {key!r} has zero reactance")
        limit = _first(rec, ("rate_a", "thermal_limit"))
        if limit is None:
            raise NetworkError(f"branch {key!r} lacks a thermal limit")
        lines.append(Line(_label(rec.get("index", key)), f, t, b, float(limit) * scale))

    gens = []
    for key, rec in _records(data, "gen"):
        if int(rec.get("gen_status", 1)) == 0:
            continue
        gtype = normalize_gen_type(_first(rec, ("gen_type", "type", "fuel", "fuel_type", "category")))
        avail = _first(rec, ("availability", "avail", "availability_factor"), default_availability)
        if avail is None:
            raise NetworkError(f"generator {key!r} lacks an availability factor")
        ramp = _first(rec, ("ramp_limit", "ramp"))
        if ramp is not None:
            ramp = float(ramp) * scale
        elif gtype == "coal" and coal_ramp is not None:
            ramp = coal_ramp
        country = rec.get("country")
        gens.append(
            Generator(
                id=_label(rec.get("index", key)),
                bus=_label(_first(rec, ("gen_bus", "bus"))),
                gen_type=gtype,
                rated_power=float(_first(rec, ("pmax", "rated_power"), 0.0)) * scale,
                availability=float(avail),
                ramp_limit=ramp,
                country=str(country) if country else None,
            )
        )

    for key, rec in _records(data, "load"):
        if int(rec.get("status", 1)) == 0:
            continue
        bid = _label(_first(rec, ("load_bus", "bus")))
        if bid not in buses:
            raise NetworkError(f"load {key!r} references unknown bus {bid!r}")
        w = _first(rec, ("weight", "load_weight", "pd"), 0.0)
        buses[bid]["weight"] += float(w)
        buses[bid]["is_load"] = True

    bus_objs = tuple(
        Bus(bid, info["country"], info["weight"], info["is_load"]) for bid, info in buses.items()
    )
    net = Network(bus_objs, tuple(lines), tuple(gens), base_power=base)
    net = largest_component(net)
    return normalize_weights(net)


def largest_component(net: Network) -> Network:
    """Restrict ``net`` to its largest connected component (warning if anything is dropped)."""
    n_comp, labels = _components(net)
    if n_comp <= 1:
        return net
    keep_label = np.bincount(labels).argmax()
    keep = {b.id for b, lab in zip(net.buses, labels) if lab == keep_label}
    logger.warning(
        "network has %d connected components; keeping the largest (%d of %d buses)",
        n_comp,
        len(keep),
        len(net.buses),
    )
    return replace(
        net,
        buses=tuple(b for b in net.buses if b.id in keep),
        lines=tuple(ln for ln in net.lines if ln.from_bus in keep),
        generators=tuple(g for g in net.generators if g.bus in keep),
    )


def _components(net: Network) -> tuple[int, np.ndarray]:
    n = len(net.buses)
    if n == 0:
        return 0, np.zeros(0, dtype=int)
    idx = net.bus_index
    rows = [idx[ln.from_bus] for ln in net.lines]
    cols = [idx[ln.to_bus] for ln in net.lines]
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return connected_components(adj, directed=False)


def weight_sums(net: Network) -> dict[str, float]:
    sums: dict[str, float] = defaultdict(float)
    for b in net.buses:
        if b.is_load and b.country is not None:
            sums[b.country] += b.load_weight
    return dict(sums)


def normalize_weights(net: Network) -> Network:
    """Rescale load weights so they sum to one within each country."""
    sums = weight_sums(net)
    raw = dict(net.raw_weight_sums) or sums
    buses = []
    for b in net.buses:
        s = sums.get(b.country, 0.0)
        if b.is_load and s > 0:
            b = replace(b, load_weight=b.load_weight / s)
        buses.append(b)
    return replace(net, buses=tuple(buses), raw_weight_sums=raw)


def read_country_membership(text: str) -> dict[str, str]:
    """Parse a membership CSV (country codes as headers, element labels as values)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise NetworkError("empty country membership file") from None
    out: dict[str, str] = {}
    for row in reader:
        for code, label in zip(header, row):
            label = label.strip()
            if label:
                out[label] = code.strip()
    return out


def write_country_membership(members: Mapping[str, str]) -> str:
    by_country: dict[str, list[str]] = defaultdict(list)
    for label, code in members.items():
        by_country[code].append(label)
    codes = sorted(by_country)
    depth = max((len(v) for v in by_country.values()), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(codes)
    for i in range(depth):
        w.writerow([by_country[c][i] if i < len(by_country[c]) else "" for c in codes])
    return buf.getvalue()


def apply_country_membership(
    net: Network,
    bus_countries: Mapping[str, str] | None = None,
    gen_countries: Mapping[str, str] | None = None,
) -> Network:
    """Assign countries from membership tables and renormalize load weights."""
    buses = net.buses
    if bus_countries:
        buses = tuple(replace(b, country=bus_countries.get(b.id, b.country)) for b in buses)
    gens = net.generators
    if gen_countries:
        gens = tuple(replace(g, country=gen_countries.get(g.id, g.country)) for g in gens)
    out = replace(net, buses=buses, generators=gens, raw_weight_sums={})
    return normalize_weights(out)


def network_to_json(net: Network) -> str:
    """Serialize to the same PowerModels-style layout :func:`parse_network` reads."""
    doc = {
        "baseMVA": net.base_power,
        "per_unit": True,
        "bus": {
            b.id: {"index": b.id, "bus_i": b.id, "bus_type": 1, "country": b.country}
            for b in net.buses
        },
        "branch": {
            ln.id: {
                "index": ln.id,
                "f_bus": ln.from_bus,
                "t_bus": ln.to_bus,
                "br_x": 1.0 / ln.susceptance,
                "rate_a": ln.thermal_limit,
                "br_status": 1,
            }
            for ln in net.lines
        },
        "gen": {
            g.id: {
                "index": g.id,
                "gen_bus": g.bus,
                "type": g.gen_type,
                "pmax": g.rated_power,
                "availability": g.availability,
                "ramp_limit": g.ramp_limit,
                "country": g.country,
                "gen_status": 1,
            }
            for g in net.generators
        },
        "load": {
            b.id: {"index": b.id, "load_bus": b.id, "weight": b.load_weight, "status": 1}
            for b in net.buses
            if b.is_load
        },
    }
    return json.dumps(doc, indent=1)


# ---------------------------------------------------------------------------
# preprocessing


def remove_small_generators(net: Network, threshold: float) -> Network:
    """Drop generators whose rated power is below ``threshold`` (per-unit)."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    kept = tuple(g for g in net.generators if g.rated_power >= threshold)
    if len(kept) == len(net.generators):
        return net
    logger.info("removed %d generators below %.3g pu", len(net.generators) - len(kept), threshold)
    return replace(net, generators=kept)


def build_matrices(net: Network) -> GridMatrices:
    """Incidence matrix (+1 at from-bus, -1 at to-bus), susceptance diagonal, thermal limits."""
    n, m = len(net.buses), len(net.lines)
    idx = net.bus_index
    rows = np.empty(2 * m, dtype=int)
    rows[0::2] = [idx[ln.from_bus] for ln in net.lines]
    rows[1::2] = [idx[ln.to_bus] for ln in net.lines]
    cols = np.repeat(np.arange(m), 2)
    vals = np.tile([1.0, -1.0], m)
    incidence = sp.csc_matrix((vals, (rows, cols)), shape=(n, m))
    b = np.array([ln.susceptance for ln in net.lines], dtype=float)
    thermal = np.array([ln.thermal_limit for ln in net.lines], dtype=float)
    return GridMatrices(incidence, sp.diags(b), thermal)


def generator_bus_matrix(net: Network, generators: Iterable[Generator]) -> sp.csc_matrix:
    """Sparse buses x generators map placing each generator's output on its bus."""
    gens = list(generators)
    idx = net.bus_index
    rows = [idx[g.bus] for g in gens]
    return sp.csc_matrix(
        (np.ones(len(gens)), (rows, np.arange(len(gens)))), shape=(len(net.buses), len(gens))
    )


@dataclass
class NetworkReport:
    connected: bool
    n_components: int
    n_buses: int
    n_lines: int
    weight_deviation: dict[str, float]
    gen_count_by_type: dict[str, int]
    rated_by_type: dict[str, float]
    buses_without_country: int

    @property
    def flagged_countries(self) -> list[str]:
        return sorted(c for c, d in self.weight_deviation.items() if d > WEIGHT_TOL)

    def as_text(self) -> str:
        lines = [
            f"connected: {str(self.connected).lower()}",
            f"components: {self.n_components}",
            f"buses: {self.n_buses}",
            f"lines: {self.n_lines}",
            f"buses without country: {self.buses_without_country}",
        ]
        for c in sorted(self.weight_deviation):
            flag = "  FLAGGED" if c in self.flagged_countries else ""
            lines.append(f"weight deviation {c}: {self.weight_deviation[c]:.3g}{flag}")
        for t in GEN_TYPES:
            if self.gen_count_by_type.get(t):
                lines.append(
                    f"generators {t}: {self.gen_count_by_type[t]} "
                    f"({self.rated_by_type[t]:.4g} pu rated)"
                )
        return "\n".join(lines)


def validate_network(net: Network) -> NetworkReport:
    n_comp, _ = _components(net)
    sums = dict(net.raw_weight_sums) or weight_sums(net)
    counts = Counter(g.gen_type for g in net.generators)
    rated: dict[str, float] = defaultdict(float)
    for g in net.generators:
        rated[g.gen_type] += g.rated_power
    return NetworkReport(
        connected=n_comp == 1,
        n_components=n_comp,
        n_buses=len(net.buses),
        n_lines=len(net.lines),
        weight_deviation={c: abs(1.0 - s) for c, s in sums.items()},
        gen_count_by_type=dict(counts),
        rated_by_type=dict(rated),
        buses_without_country=sum(1 for b in net.buses if b.country is None),
    )
