"""End-to-end generation: history and network in, load/generator/line tables out.

Inputs are described by an INI file::

    [paths]
    network = grid.json           ; PowerModels-style JSON
    history = history/            ; loads/<CC>.csv, nuclear/<unit>.csv, generation/<CC>_<type>.csv
    output = out/
    bus_countries =               ; optional membership CSVs
    gen_countries =

    [run]
    seed = 1
    years = 2016                  ; reference years (nuclear profiles, file labels)
    replicas = 1
    rho_target = 0.8
    noise_scale = 1.0
    sparsify_threshold = 1e-3
    small_generator_threshold = 0.5
    max_gap = 24

    [exports]                     ; annual mean net export in MW, + = export
    FR = 3016

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
import contextlib
import hashlib
import json
import logging
import os
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from . import __version__
from . import rng as rng_mod
from .dc_power_flow import flow_operator, flows_for_table, line_limits, loading_fractions
from .dispatch_opf import build_problem, dispatch_year, noise_matrix
from .errors import GridSynthError, InputError, TableError, ValidationError
from .grid_model import (
    Network,
    apply_country_membership,
    network_to_json,
    parse_network,
    read_country_membership,
    remove_small_generators,
    validate_network,
    write_country_membership,
)
from .load_synthesis import (
    DEFAULT_RHO,
    DEFAULT_SPARSIFY,
    FourierEnsemble,
    disaggregate,
    ensemble_from_json,
    ensemble_to_json,
    pairwise_pearson,
    prepare_ensemble,
)
from .series_ingest import (
    DEFAULT_MAX_GAP,
    HOURS_PER_YEAR,
    AnnualSeries,
    BalanceRecord,
    calendar_years,
    canonicalize_year,
    compute_scaling_factors,
    fill_gaps,
    read_raw_csv,
    synthetic_nuclear_profile,
)
from .tables import Table, read_table, table_filename, table_to_csv
from .verification import verify_solution

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
AUX_DIR = "aux"
LOCK_SUFFIX = ".lock"
NETWORK_FILE = "network.json"
LOADS_BY_COUNTRY = "loads_by_country.csv"
GENS_BY_COUNTRY = "gens_by_country.csv"
LINE_TOL = 1e-6
RESIDUAL_TOL = {"bounds": 1e-6, "balance": 1e-6, "availability": 1e-6, "ramp": 1e-6, "nuclear": 1e-9}
PEARSON_TOL = 0.03


@dataclass(frozen=True)
class PipelineConfig:
    network: Path
    history: Path
    output: Path
    years: tuple[int, ...]
    seed: int = 0
    replicas: int = 1
    rho_target: float = DEFAULT_RHO
    noise_scale: float = 1.0
    sparsify_threshold: float = DEFAULT_SPARSIFY
    small_generator_threshold: float = 0.5
    max_gap: int = DEFAULT_MAX_GAP
    exports_mw: Mapping[str, float] = field(default_factory=dict)
    rho_overrides: Mapping[str, float] = field(default_factory=dict)
    bus_countries: Path | None = None
    gen_countries: Path | None = None

    def __post_init__(self):
        if self.replicas < 1:
            raise InputError("replica count must be at least 1")
        if not self.years:
            raise InputError("at least one reference year is required")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be a non-negative 64-bit integer")
        if self.noise_scale < 0:
            raise InputError("noise scale must be non-negative")

    def snapshot(self) -> dict:
        d = asdict(self)
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in d.items()}

    def check_paths(self) -> None:
        for label, path in (("network", self.network), ("history", self.history)):
            if not path.exists():
                raise InputError(f"{label} path {path} does not exist")
        for path in (self.bus_countries, self.gen_countries):
            if path is not None and not path.exists():
                raise InputError(f"membership file {path} does not exist")


def load_config(path: str | os.PathLike, overrides: Mapping[str, object] | None = None) -> PipelineConfig:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep country codes as written
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    base = path.resolve().parent

    def p(key, required=True):
        raw = parser.get("paths", key, fallback="").strip()
        if not raw:
            if required:
                raise InputError(f"config lacks paths.{key}")
            return None
        q = Path(raw)
        return q if q.is_absolute() else base / q

    run = parser["run"] if parser.has_section("run") else {}
    try:
        kwargs = dict(
            network=p("network"),
            history=p("history"),
            output=p("output", required=False) or base / "out",
            years=tuple(int(y) for y in str(run.get("years", "")).replace(",", " ").split()),
            seed=int(run.get("seed", 0)),
            replicas=int(run.get("replicas", 1)),
            rho_target=float(run.get("rho_target", DEFAULT_RHO)),
            noise_scale=float(run.get("noise_scale", 1.0)),
            sparsify_threshold=float(run.get("sparsify_threshold", DEFAULT_SPARSIFY)),
            small_generator_threshold=float(run.get("small_generator_threshold", 0.5)),
            max_gap=int(run.get("max_gap", DEFAULT_MAX_GAP)),
            exports_mw={k: float(v) for k, v in parser["exports"].items()} if parser.has_section("exports") else {},
            rho_overrides={k: float(v) for k, v in parser["rho"].items()} if parser.has_section("rho") else {},
            bus_countries=p("bus_countries", required=False),
            gen_countries=p("gen_countries", required=False),
        )
    except ValueError as exc:
        raise InputError(f"bad value in config {path}: {exc}") from exc
    for k, v in (overrides or {}).items():
        if v is not None:
            kwargs[k] = Path(v) if k == "output" else v
    return PipelineConfig(**kwargs)


# ---------------------------------------------------------------------------
# filesystem helpers


@contextlib.contextmanager
def output_lock(target: Path) -> Iterator[None]:
    """Reject concurrent runs writing to the same output directory."""
    lock = target.with_name(target.name + LOCK_SUFFIX)
    lock.parent.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputError(f"output {target} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(lock)


@contextlib.contextmanager
def atomic_directory(target: Path) -> Iterator[Path]:
    """Yield a scratch directory that replaces ``target`` only if the block succeeds."""
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if target.exists():
        old = target.with_name(f".{target.name}.old-{os.getpid()}")
        os.replace(target, old)
    os.replace(tmp, target)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class StageTimer:
    def __init__(self):
        self.seconds: dict[str, float] = {}

    @contextlib.contextmanager
    def stage(self, name: str) -> Iterator[None]:
        t0 = time.perf_counter()
        try:
            yield
        except GridSynthError as exc:
            if not str(exc).startswith(f"[{name}]"):
                exc.args = (f"[{name}] {exc}",) + exc.args[1:]
            raise
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - t0


# ---------------------------------------------------------------------------
# stages


@dataclass
class IngestResult:
    net: Network
    loads: dict[str, list[AnnualSeries]]  # country -> canonical years
    nuclear: dict[int, Table]  # reference year -> unit profiles (pu)
    synthetic_nuclear: list[str]


def load_network(cfg: PipelineConfig) -> Network:
    try:
        text = cfg.network.read_text()
    except OSError as exc:
        raise InputError(f"cannot read network {cfg.network}: {exc}") from exc
    net = parse_network(text)
    if cfg.bus_countries or cfg.gen_countries:
        buses = read_country_membership(cfg.bus_countries.read_text()) if cfg.bus_countries else None
        gens = read_country_membership(cfg.gen_countries.read_text()) if cfg.gen_countries else None
        net = apply_country_membership(net, buses, gens)
    net = remove_small_generators(net, cfg.small_generator_threshold)
    report = validate_network(net)
    for c in report.flagged_countries:
        logger.warning("country %s load weights deviated from 1 by %.3g before normalization", c, report.weight_deviation[c])
    return net


def ingest(cfg: PipelineConfig, net: Network) -> IngestResult:
    """Canonical annual load series per country and nuclear unit profiles per reference year."""
    loads: dict[str, list[AnnualSeries]] = {}
    load_dir = cfg.history / "loads"
    for country in net.countries:
        if not any(b.is_load and b.load_weight > 0 and b.country == country for b in net.buses):
            continue
        path = load_dir / f"{country}.csv"
        if not path.exists():
            raise InputError(f"no historical load file for country {country} ({path})")
        raw = fill_gaps(read_raw_csv(path, country), cfg.max_gap)
        years = calendar_years(raw)
        loads[country] = [canonicalize_year(raw, y, net.base_power) for y in years]
        if len(loads[country]) < 2:
            raise InputError(f"{country}: need at least two full calendar years of load, found {len(years)}")

    nuclear: dict[int, Table] = {}
    synthetic: list[str] = []
    for year in cfg.years:
        cols, vals = [], []
        for g in net.nuclear:
            path = cfg.history / "nuclear" / f"{g.id}.csv"
            prof = None
            if path.exists():
                raw = fill_gaps(read_raw_csv(path, g.id), cfg.max_gap)
                if year in calendar_years(raw):
                    prof = canonicalize_year(raw, year, net.base_power).values
            if prof is None:
                prof = synthetic_nuclear_profile(g.rated_power, rng_mod.stream(cfg.seed, "nuclear", g.id, year))
                synthetic.append(f"{g.id}:{year}")
            cols.append(g.id)
            vals.append(prof)
        nuclear[year] = Table(tuple(cols), np.column_stack(vals) if vals else np.zeros((HOURS_PER_YEAR, 0)))
    if synthetic:
        logger.info("synthetic maintenance profiles used for %d nuclear unit-years", len(synthetic))
    return IngestResult(net, loads, nuclear, synthetic)


def balance_records(
    net: Network,
    nuclear: Table,
    raw_loads: Mapping[str, float],
    exports_mw: Mapping[str, float],
) -> dict[str, BalanceRecord]:
    """Expected production, export and load scaling per country (annual means, per-unit).

    Exports are shifted by a common amount when they do not sum to zero, so
    the system as a whole stays balanced.
    """
    production = {c: 0.0 for c in raw_loads}
    for g in net.generators:
        c = net.gen_country(g)
        if c not in production:
            continue
        if g.dispatchable:
            production[c] += g.availability * g.rated_power
        else:
            production[c] += float(nuclear.column(g.id).mean())
    exports = {c: exports_mw.get(c, 0.0) / net.base_power for c in raw_loads}
    unknown = set(exports_mw) - set(raw_loads)
    if unknown:
        logger.warning("exports given for countries without load: %s", sorted(unknown))
    # generation in countries without load still has to go somewhere
    orphan = sum(
        (g.availability * g.rated_power if g.dispatchable else float(nuclear.column(g.id).mean()))
        for g in net.generators
        if net.gen_country(g) not in raw_loads
    )
    if orphan:
        logger.warning("%.4g pu of expected production sits in countries without load", orphan)
    excess = sum(exports.values()) + orphan
    if abs(excess) > 1e-12:
        logger.warning("net exports do not sum to zero (%.4g pu); shifting every country equally", excess)
        shift = excess / len(exports)
        exports = {c: v - shift for c, v in exports.items()}
    return compute_scaling_factors(production, exports, raw_loads)


def fit_all(cfg: PipelineConfig, loads: Mapping[str, list[AnnualSeries]]) -> dict[str, FourierEnsemble]:
    out = {}
    for country, years in sorted(loads.items()):
        rho = cfg.rho_overrides.get(country, cfg.rho_target)
        out[country] = prepare_ensemble(years, country, rho, cfg.sparsify_threshold)
        logger.info("%s: ensemble fitted from %d years", country, len(years))
    return out


def sample_loads(
    cfg: PipelineConfig, net: Network, ensembles, records: Mapping[str, BalanceRecord], year: int, replica: int
) -> Table:
    totals = {c: r.production - r.export for c, r in records.items()}
    return disaggregate(ensembles, net, totals, cfg.seed, key=(year, replica))


def dispatch(cfg: PipelineConfig, net: Network, loads: Table, nuclear: Table, year: int, replica: int) -> Table:
    noise = noise_matrix(net.dispatchable, cfg.seed, (year, replica), cfg.noise_scale, loads.n_steps)
    problem = build_problem(net, loads, nuclear, noise)
    return dispatch_year(problem)


def _write_table(table: Table, path: Path) -> None:
    write_text_atomic(path, table_to_csv(table))


def _write_and_reread(table: Table, path: Path) -> Table:
    # downstream stages consume the serialized values, whether chained or run separately
    _write_table(table, path)
    return read_table(path, table.columns, table.n_steps)


# ---------------------------------------------------------------------------
# stage artifacts in a working directory
#
# Every stage reads what the previous one wrote, so the CLI can run them one
# at a time; ``run_generate`` chains them inside a scratch directory.


def write_ingest(directory: Path, ing: IngestResult) -> None:
    net = ing.net
    aux = directory / AUX_DIR
    write_text_atomic(directory / NETWORK_FILE, network_to_json(net))
    write_text_atomic(
        directory / LOADS_BY_COUNTRY,
        write_country_membership({b.id: b.country for b in net.load_buses if b.country}),
    )
    write_text_atomic(
        directory / GENS_BY_COUNTRY,
        write_country_membership({g.id: net.gen_country(g) for g in net.generators if net.gen_country(g)}),
    )
    for c, series in ing.loads.items():
        table = Table(tuple(str(s.year) for s in series), np.column_stack([s.values for s in series]))
        _write_table(table, aux / f"history_{c}.csv")
    for year, table in ing.nuclear.items():
        _write_table(table, aux / f"nuclear_{year}.csv")
    write_text_atomic(aux / "ingest.json", json.dumps({"synthetic_nuclear": ing.synthetic_nuclear}, indent=1) + "\n")


def read_network(directory: Path) -> Network:
    try:
        return parse_network((directory / NETWORK_FILE).read_text())
    except OSError as exc:
        raise InputError(f"{directory} has no readable {NETWORK_FILE}; run ingest first") from exc


def read_ingest(directory: Path, years) -> IngestResult:
    net = read_network(directory)
    aux = directory / AUX_DIR
    loads = {}
    for p in sorted(aux.glob("history_*.csv")):
        c = p.stem.split("_", 1)[1]
        t = read_table(p, n_rows=HOURS_PER_YEAR)
        loads[c] = [AnnualSeries(t.values[:, j], c, int(y)) for j, y in enumerate(t.columns)]
    nuclear = {}
    for year in years:
        p = aux / f"nuclear_{year}.csv"
        if not p.exists():
            raise InputError(f"no nuclear profiles for year {year} in {aux}; run ingest first")
        nuclear[year] = read_table(p, [g.id for g in net.nuclear], HOURS_PER_YEAR)
    meta = json.loads((aux / "ingest.json").read_text()) if (aux / "ingest.json").exists() else {}
    return IngestResult(net, loads, nuclear, meta.get("synthetic_nuclear", []))


def write_ensembles(directory: Path, ensembles: Mapping[str, FourierEnsemble]) -> None:
    for c, ens in ensembles.items():
        write_text_atomic(directory / AUX_DIR / f"ensemble_{c}.json", ensemble_to_json(ens))


def read_ensembles(directory: Path) -> dict[str, FourierEnsemble]:
    out = {}
    for p in sorted((directory / AUX_DIR).glob("ensemble_*.json")):
        out[p.stem.split("_", 1)[1]] = ensemble_from_json(p.read_text())
    if not out:
        raise InputError(f"no fitted ensembles in {directory / AUX_DIR}; run fit-loads first")
    return out


def year_records(cfg: PipelineConfig, ing: IngestResult, year: int) -> dict[str, BalanceRecord]:
    raw = {}
    for c, series in ing.loads.items():
        match = [s for s in series if s.year == year]
        raw[c] = match[0].mean() if match else float(np.mean([s.mean() for s in series]))
    return balance_records(ing.net, ing.nuclear[year], raw, cfg.exports_mw)


def write_records(directory: Path, year: int, records: Mapping[str, BalanceRecord]) -> None:
    rows = ["country,production,export,raw_load,scaling_factor"]
    for c, r in sorted(records.items()):
        rows.append(f"{c},{r.production:.12g},{r.export:.12g},{r.raw_load:.12g},{r.scaling_factor:.12g}")
    write_text_atomic(directory / AUX_DIR / f"balance_{year}.csv", "\n".join(rows) + "\n")


def stage_ingest(cfg: PipelineConfig, directory: Path) -> IngestResult:
    cfg.check_paths()
    write_ingest(directory, ingest(cfg, load_network(cfg)))
    # later stages see exactly what a separate invocation would read back
    return read_ingest(directory, cfg.years)


def stage_fit(cfg: PipelineConfig, directory: Path, ing: IngestResult | None = None) -> dict[str, FourierEnsemble]:
    ing = ing or read_ingest(directory, ())
    write_ensembles(directory, fit_all(cfg, ing.loads))
    return read_ensembles(directory)


def stage_sample(cfg, directory: Path, year: int, replica: int, ing=None, ensembles=None) -> Table:
    ing = ing or read_ingest(directory, (year,))
    ensembles = ensembles or read_ensembles(directory)
    records = year_records(cfg, ing, year)
    write_records(directory, year, records)
    loads = sample_loads(cfg, ing.net, ensembles, records, year, replica)
    return _write_and_reread(loads, directory / table_filename("loads", year, replica))


def stage_dispatch(cfg, directory: Path, year: int, replica: int, net=None, loads=None, nuclear=None) -> Table:
    net = net or read_network(directory)
    if loads is None:
        loads = read_table(
            directory / table_filename("loads", year, replica), [b.id for b in net.load_buses], HOURS_PER_YEAR
        )
    if nuclear is None:
        nuclear = read_ingest(directory, (year,)).nuclear[year]
    gens = dispatch(cfg, net, loads, nuclear, year, replica)
    return _write_and_reread(gens, directory / table_filename("gens", year, replica))


def stage_flows(directory: Path, year: int, replica: int, net=None, loads=None, gens=None, op=None) -> Table:
    net = net or read_network(directory)
    if loads is None or gens is None:
        loads = read_table(
            directory / table_filename("loads", year, replica), [b.id for b in net.load_buses], HOURS_PER_YEAR
        )
        gens = read_table(
            directory / table_filename("gens", year, replica), [g.id for g in net.generators], HOURS_PER_YEAR
        )
    lines = flows_for_table(net, loads, gens, op, tol=1e-6)
    _write_table(lines, directory / table_filename("lines", year, replica))
    return lines


def write_manifest(directory: Path, cfg: PipelineConfig, timer: StageTimer, extra: Mapping | None = None) -> None:
    files = {
        str(p.relative_to(directory)): sha256(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != MANIFEST
    }
    manifest = {
        "code_version": __version__,
        "seed": cfg.seed,
        "config": cfg.snapshot(),
        "stage_seconds": {k: round(v, 3) for k, v in timer.seconds.items()},
        "files": files,
        **(extra or {}),
    }
    write_text_atomic(directory / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def run_generate(cfg: PipelineConfig) -> Path:
    """Run every stage and publish the output directory atomically. Returns its path."""
    cfg.check_paths()
    timer = StageTimer()
    target = cfg.output
    with output_lock(target), atomic_directory(target) as tmp:
        with timer.stage("ingest"):
            ing = stage_ingest(cfg, tmp)
        with timer.stage("fit-loads"):
            ensembles = stage_fit(cfg, tmp, ing)
        net = ing.net
        op = flow_operator(net)
        for year in cfg.years:
            for k in range(1, cfg.replicas + 1):
                with timer.stage("sample-loads"):
                    loads = stage_sample(cfg, tmp, year, k, ing, ensembles)
                with timer.stage("dispatch"):
                    gens = stage_dispatch(cfg, tmp, year, k, net, loads, ing.nuclear[year])
                with timer.stage("flows"):
                    stage_flows(tmp, year, k, net, loads, gens, op)
                logger.info("year %s replica %d written", year, k)
        write_manifest(tmp, cfg, timer, {"synthetic_nuclear": ing.synthetic_nuclear})
    return target


# ---------------------------------------------------------------------------
# reading and validating an output directory


def triplet_labels(directory: Path) -> list[tuple[str, str]]:
    """``(year, replica)`` labels, checking that every label has all three tables."""
    found: dict[tuple[str, str], set[str]] = {}
    for p in directory.glob("*_*_*.csv"):
        if p.name in (LOADS_BY_COUNTRY, GENS_BY_COUNTRY):
            continue
        parts = p.stem.split("_")
        if len(parts) != 3 or parts[0] not in ("loads", "gens", "lines"):
            continue
        found.setdefault((parts[1], parts[2]), set()).add(parts[0])
    if not found:
        raise TableError(f"no load/generator/line tables in {directory}")
    for label, kinds in sorted(found.items()):
        missing = {"loads", "gens", "lines"} - kinds
        if missing:
            raise TableError(f"label {label[0]}_{label[1]} lacks {sorted(missing)} table(s)")
    return sorted(found)


def read_tables(directory: str | os.PathLike, label: str, net: Network | None = None, n_rows: int = HOURS_PER_YEAR):
    """Read the ``loads/gens/lines`` triplet for ``label`` (``"<year>_<k>"``)."""
    directory = Path(directory)
    if net is None:
        net = parse_network((directory / NETWORK_FILE).read_text())
    year, _, replica = label.partition("_")
    labels = {
        "loads": [b.id for b in net.load_buses],
        "gens": [g.id for g in net.generators],
        "lines": [ln.id for ln in net.lines],
    }
    out = []
    for kind in ("loads", "gens", "lines"):
        path = directory / table_filename(kind, year, replica)
        if not path.exists():
            raise TableError(f"missing {path.name}")
        try:
            out.append(read_table(path, labels[kind], n_rows))
        except TableError as exc:
            raise TableError(f"{path.name}: {exc}") from exc
    return tuple(out)


@dataclass
class ValidationReport:
    checks: dict[str, bool]
    lines: list[str]

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def as_text(self) -> str:
        status = [f"{'PASS' if v else 'FAIL'} {k}" for k, v in self.checks.items()]
        return "\n".join(self.lines + [""] + status) + "\n"


def _historical_typed(history: Path | None, base_power: float) -> dict[tuple[str, str], np.ndarray]:
    out = {}
    if history is None or not (history / "generation").is_dir():
        return out
    for p in sorted((history / "generation").glob("*_*.csv")):
        country, _, gtype = p.stem.partition("_")
        raw = fill_gaps(read_raw_csv(p, p.stem))
        years = calendar_years(raw)
        if years:
            out[(country, gtype)] = canonicalize_year(raw, years[-1], base_power).values
    return out


def run_validate(
    directory: str | os.PathLike,
    history: str | os.PathLike | None = None,
    rho_target: float | None = None,
) -> ValidationReport:
    """Re-check a generated dataset and write plot-ready summaries to ``<dir>/aux/validation``."""
    directory = Path(directory)
    try:
        net = parse_network((directory / NETWORK_FILE).read_text())
    except OSError as exc:
        raise InputError(f"{directory} has no readable network.json") from exc
    manifest = {}
    if (directory / MANIFEST).exists():
        manifest = json.loads((directory / MANIFEST).read_text())
    rho = rho_target if rho_target is not None else manifest.get("config", {}).get("rho_target", DEFAULT_RHO)
    outdir = directory / AUX_DIR / "validation"
    outdir.mkdir(parents=True, exist_ok=True)
    limits = line_limits(net)
    op = flow_operator(net)
    hist = _historical_typed(Path(history) if history else None, net.base_power)

    checks: dict[str, bool] = {}
    text: list[str] = []
    pearson_all: list[np.ndarray] = []
    frac_rows = ["label,threshold,fraction"]
    resid_rows = ["label," + ",".join(RESIDUAL_TOL) + ",lines"]
    typed_rows = ["label,country,gen_type,week,synthetic_mean"]
    for year, k in triplet_labels(directory):
        label = f"{year}_{k}"
        loads, gens, lines = read_tables(directory, label, net)

        by_country: dict[str, list[int]] = {}
        for j, bid in enumerate(loads.columns):
            b = net.buses[net.bus_index[bid]]
            if np.std(loads.values[:, j]) > 0:
                by_country.setdefault(b.country, []).append(j)
        for idx in by_country.values():
            if len(idx) > 1:
                pearson_all.append(pairwise_pearson(loads.values[:, idx].T))

        for th, fr in loading_fractions(lines, limits).items():
            frac_rows.append(f"{label},{th},{fr:.12g}")

        nuclear = Table(tuple(g.id for g in net.nuclear), gens.select([g.id for g in net.nuclear]))
        aux_nuc = directory / AUX_DIR / f"nuclear_{year}.csv"
        if aux_nuc.exists():
            nuclear = read_table(aux_nuc, [g.id for g in net.nuclear], gens.n_steps)
        problem = build_problem(net, loads, nuclear, balance_tol=1e-5)
        rep = verify_solution(problem, gens, with_feasible=False)
        try:
            recomputed = flows_for_table(net, loads, gens, op, tol=1e-5)
        except TableError as exc:
            # unbalanced injections have no flow solution; the balance check already fails
            logger.warning("%s: %s", label, exc)
            line_err = float("inf")
        else:
            line_err = float(np.max(np.abs(recomputed.select(lines.columns) - lines.values))) if lines.values.size else 0.0
        resid_rows.append(label + "," + ",".join(f"{rep.residuals[f]:.3e}" for f in RESIDUAL_TOL) + f",{line_err:.3e}")
        for f, tol in RESIDUAL_TOL.items():
            checks[f"{label} {f} residual <= {tol:g}"] = rep.residuals[f] <= tol
        checks[f"{label} lines match recomputed flows within {LINE_TOL:g}"] = line_err <= LINE_TOL
        text.append(f"[{label}]\n{rep.as_text()}\nline table deviation: {line_err:.3e}")

        weeks = gens.n_steps // 168
        for c in net.countries:
            for gtype in sorted({g.gen_type for g in net.generators}):
                ids = [g.id for g in net.generators if g.gen_type == gtype and net.gen_country(g) == c]
                if not ids:
                    continue
                total = gens.select(ids).sum(axis=1)[: weeks * 168].reshape(weeks, 168).mean(axis=1)
                for w, v in enumerate(total):
                    typed_rows.append(f"{label},{c},{gtype},{w + 1},{v:.12g}")

    if pearson_all:
        coeffs = np.concatenate(pearson_all)
        hist_counts, edges = np.histogram(coeffs, bins=40, range=(-1.0, 1.0))
        rows = ["bin_left,bin_right,count"] + [
            f"{edges[i]:.3f},{edges[i + 1]:.3f},{hist_counts[i]}" for i in range(len(hist_counts))
        ]
        write_text_atomic(outdir / "pearson_histogram.csv", "\n".join(rows) + "\n")
        mean = float(coeffs.mean())
        text.append(f"pairwise Pearson: mean {mean:.4f} over {len(coeffs)} pairs (target {rho})")
        checks[f"mean Pearson within {rho} +/- {PEARSON_TOL}"] = abs(mean - rho) <= PEARSON_TOL

    if hist:
        hist_rows = ["country,gen_type,week,historical_mean"]
        for (c, gtype), series in sorted(hist.items()):
            for w, v in enumerate(series.reshape(-1, 168).mean(axis=1)):
                hist_rows.append(f"{c},{gtype},{w + 1},{v:.12g}")
        write_text_atomic(outdir / "typed_production_historical.csv", "\n".join(hist_rows) + "\n")

    write_text_atomic(outdir / "loading_fractions.csv", "\n".join(frac_rows) + "\n")
    write_text_atomic(outdir / "residuals.csv", "\n".join(resid_rows) + "\n")
    write_text_atomic(outdir / "typed_production_synthetic.csv", "\n".join(typed_rows) + "\n")
    report = ValidationReport(checks, text)
    write_text_atomic(outdir / "report.txt", report.as_text())
    return report


def require_valid(report: ValidationReport) -> None:
    if not report.ok:
        failed = [k for k, v in report.checks.items() if not v]
        raise ValidationError(f"validation failed: {', '.join(failed)}")
