"""Time-coupled convex dispatch of non-nuclear generators.

For every hour ``t`` and dispatchable generator ``i`` the output ``P_i(t)``
minimizes

    sum_t sum_a  phi_a(t)^2 / limit_a   +   sum_t sum_i c_i(t) P_i(t)

subject to ``0 <= P_i(t) <= rated_i``, per-step balance with the loads (net of
nuclear), a fixed mean output ``A_i * rated_i`` per generator and, for ramped
units, ``|P_i(t+1) - P_i(t)| <= ramp_i`` (periodic over the year). ``c_i`` is
a random periodic cost built from annual, weekly and daily harmonics.

A year is solved in two passes: one QP on weekly means (outputs restricted to
90 % of the feasible interval) fixes a mean output per generator and week,
then each week is solved hour by hour against those targets. Ramp continuity
across weeks is enforced by anchoring each week on its predecessor's last hour.

The QPs are written in angle form (outputs plus bus voltage angles per step,
sparse nodal balance) and handed to Clarabel, an interior-point solver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import clarabel
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import rng as rng_mod
from .dc_power_flow import FlowOperator
from .errors import InputError, SolverError
from .grid_model import Generator, Network, generator_bus_matrix
from .tables import Table

logger = logging.getLogger(__name__)

HOURS_PER_WEEK = 168
COARSE_LOW = 0.1  # coarse bounds: [0.1 A P, (0.9 + 0.1 A) P]
RAMP_TOL = 1e-8
EQUALITY_REPAIR_MAX = 1e-6

ANNUAL_HARMONICS = 10
WEEKLY_HARMONICS = 6
DAILY_HARMONICS = 3


class DispatchInfeasible(SolverError):
    pass


# ---------------------------------------------------------------------------
# cost noise


def noise_frequencies(year_hours: int = 24 * 364) -> np.ndarray:
    """Harmonic frequencies in cycles per hour (10 annual, 6 weekly, 3 daily)."""
    annual = np.arange(1, ANNUAL_HARMONICS + 1) / year_hours
    weekly = np.arange(1, WEEKLY_HARMONICS + 1) / HOURS_PER_WEEK
    daily = np.arange(1, DAILY_HARMONICS + 1) / 24.0
    return np.concatenate([annual, weekly, daily])


@dataclass(frozen=True)
class CostNoise:
    gen_id: str
    amplitudes: np.ndarray
    phases: np.ndarray
    scale: float = 1.0

    def values(self, n_steps: int, start: int = 0) -> np.ndarray:
        """``c(t) = scale * sqrt(2/n) * sum_nu A_nu cos(2 pi nu t + theta_nu)``, ``t`` in hours."""
        nu = noise_frequencies()
        t = np.arange(start, start + n_steps, dtype=float)
        arg = 2.0 * np.pi * np.outer(t, nu) + self.phases
        n = len(nu)
        return self.scale * np.sqrt(2.0 / n) * (np.cos(arg) @ self.amplitudes)


def generate_cost_noise(rng: np.random.Generator, gen_id: str, scale: float = 1.0) -> CostNoise:
    if scale < 0:
        raise ValueError("noise scale must be non-negative")
    n = len(noise_frequencies())
    amplitudes = rng.standard_normal(n)
    phases = rng.uniform(0.0, 2.0 * np.pi, n)
    return CostNoise(gen_id, amplitudes, phases, float(scale))


def noise_matrix(
    gens: Sequence[Generator],
    seed: int,
    key: Sequence = (),
    scale: float = 1.0,
    n_steps: int = 24 * 364,
) -> np.ndarray:
    """Cost noise for each generator, shape (generators, steps), keyed by ``(seed, gen, *key)``."""
    out = np.zeros((len(gens), n_steps))
    for i, g in enumerate(gens):
        noise = generate_cost_noise(rng_mod.stream(seed, "noise", g.id, *key), g.id, scale)
        out[i] = noise.values(n_steps)
    return out


# ---------------------------------------------------------------------------
# problem data


@dataclass(frozen=True)
class DispatchProblem:
    net: Network
    gens: tuple[Generator, ...]  # dispatchable units, variable order
    load_bus: np.ndarray  # (steps, buses)
    nuclear_bus: np.ndarray  # (steps, buses)
    noise: np.ndarray  # (gens, steps)
    nuclear_profiles: Table | None = None

    @property
    def n_steps(self) -> int:
        return self.load_bus.shape[0]

    @property
    def rated(self) -> np.ndarray:
        return np.array([g.rated_power for g in self.gens])

    @property
    def availability(self) -> np.ndarray:
        return np.array([g.availability for g in self.gens])

    @property
    def ramp(self) -> np.ndarray:
        return np.array([np.inf if g.ramp_limit is None else g.ramp_limit for g in self.gens])

    @property
    def injection0(self) -> np.ndarray:
        """Fixed part of the bus injection (nuclear minus load), shape (steps, buses)."""
        return self.nuclear_bus - self.load_bus

    @property
    def demand(self) -> np.ndarray:
        """Load to be covered by dispatchable units at each step."""
        return self.load_bus.sum(axis=1) - self.nuclear_bus.sum(axis=1)


def build_problem(
    net: Network,
    loads: Table,
    nuclear: Table | None = None,
    noise: np.ndarray | None = None,
    balance_tol: float = 1e-6,
) -> DispatchProblem:
    """Assemble dispatch data from a load table (bus columns) and nuclear profiles (generator columns)."""
    n_steps = loads.n_steps
    idx = net.bus_index
    load_bus = np.zeros((n_steps, len(net.buses)))
    for j, label in enumerate(loads.columns):
        if label not in idx:
            raise InputError(f"load column {label!r} is not a bus of the network")
        load_bus[:, idx[label]] += loads.values[:, j]

    nuclear_bus = np.zeros_like(load_bus)
    nuclear_gens = net.nuclear
    if nuclear_gens:
        if nuclear is None:
            raise InputError("network has nuclear units but no nuclear profiles were given")
        if nuclear.n_steps != n_steps:
            raise InputError("nuclear profiles and loads have different lengths")
        for g in nuclear_gens:
            try:
                col = nuclear.column(g.id)
            except KeyError:
                raise InputError(f"no profile for nuclear unit {g.id!r}") from None
            nuclear_bus[:, idx[g.bus]] += col

    gens = net.dispatchable
    if not gens:
        raise InputError("network has no dispatchable generators")
    if noise is None:
        noise = np.zeros((len(gens), n_steps))
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (len(gens), n_steps):
        raise InputError(f"noise must have shape {(len(gens), n_steps)}, got {noise.shape}")

    problem = DispatchProblem(net, gens, load_bus, nuclear_bus, noise, nuclear)
    expected = float(np.sum(problem.availability * problem.rated))
    mean_demand = float(problem.demand.mean())
    if abs(mean_demand - expected) > balance_tol * max(1.0, expected):
        raise InputError(
            f"mean demand net of nuclear ({mean_demand:.6g} pu) does not match expected "
            f"dispatchable production ({expected:.6g} pu)"
        )
    return problem


def feasible_point(problem: DispatchProblem, tol: float = 1e-6) -> np.ndarray:
    """Constant schedule ``A_i * rated_i``; requires a constant demand. Shape (gens, steps)."""
    level = problem.availability * problem.rated
    gap = np.abs(problem.demand - level.sum())
    if np.any(gap > tol * max(1.0, level.sum())):
        t = int(np.argmax(gap))
        raise InputError(f"constant schedule violates the balance by {gap[t]:.3g} pu at step {t}")
    return np.repeat(level[:, None], problem.n_steps, axis=1)


# ---------------------------------------------------------------------------
# QP stages


@dataclass(frozen=True)
class QPStage:
    """One dispatch QP over ``horizon`` steps (an hour, or a weekly mean, per step)."""

    injection0: np.ndarray  # (horizon, buses) nuclear minus load
    noise: np.ndarray  # (gens, horizon)
    lower: np.ndarray  # (gens,)
    upper: np.ndarray  # (gens,)
    target_mean: np.ndarray  # (gens,) required mean output over the horizon
    ramp: np.ndarray  # (gens,), inf = unconstrained
    prev_last: np.ndarray | None = None
    next_first: np.ndarray | None = None
    periodic: bool = False
    anchor_relax: float = 1.0
    label: str = ""

    @property
    def horizon(self) -> int:
        return self.injection0.shape[0]

    @property
    def n_gens(self) -> int:
        return len(self.lower)

    @property
    def demand(self) -> np.ndarray:
        return -self.injection0.sum(axis=1)


@dataclass(frozen=True)
class GridOperators:
    """Sparse matrices shared by every stage of one network."""

    laplacian: sp.csc_matrix  # buses x buses
    branch: sp.csr_matrix  # lines x buses, flow = branch @ theta
    inv_limit: np.ndarray  # lines
    gen_bus: sp.csc_matrix  # buses x gens
    reference: int = 0

    @classmethod
    def from_problem(cls, problem: DispatchProblem) -> "GridOperators":
        op = FlowOperator(problem.net)
        return cls(
            laplacian=op.laplacian,
            branch=op.branch,
            inv_limit=1.0 / op.thermal,
            gen_bus=generator_bus_matrix(problem.net, problem.gens),
            reference=op.reference,
        )


def _settings(tol: float):
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.tol_feas = tol
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.max_iter = 400
    return s


def _ramp_rows(stage: QPStage, n_vars: int):
    """Inequality rows ``G x <= h`` for ramps and anchors."""
    g_count, horizon = stage.n_gens, stage.horizon
    ramped = np.flatnonzero(np.isfinite(stage.ramp))
    rows, cols, vals, rhs = [], [], [], []
    r = 0

    def pvar(t, i):
        return t * g_count + i

    pairs = [(t, t + 1) for t in range(horizon - 1)]
    if stage.periodic and horizon > 1:
        pairs.append((horizon - 1, 0))
    for i in ramped:
        d = stage.ramp[i]
        for t0, t1 in pairs:
            for sign in (1.0, -1.0):
                rows += [r, r]
                cols += [pvar(t1, i), pvar(t0, i)]
                vals += [sign, -sign]
                rhs.append(d)
                r += 1
        da = d * stage.anchor_relax
        if stage.prev_last is not None:
            for sign in (1.0, -1.0):
                rows.append(r)
                cols.append(pvar(0, i))
                vals.append(sign)
                rhs.append(da + sign * stage.prev_last[i])
                r += 1
        if stage.next_first is not None:
            for sign in (1.0, -1.0):
                rows.append(r)
                cols.append(pvar(horizon - 1, i))
                vals.append(-sign)
                rhs.append(da - sign * stage.next_first[i])
                r += 1
    mat = sp.csc_matrix((vals, (rows, cols)), shape=(r, n_vars))
    return mat, np.asarray(rhs, dtype=float)


def solve_stage(stage: QPStage, ops: GridOperators, tol: float = 1e-10) -> np.ndarray:
    """Solve one stage; returns outputs of shape (gens, horizon)."""
    g_count, horizon = stage.n_gens, stage.horizon
    n_bus = ops.laplacian.shape[0]
    keep = np.delete(np.arange(n_bus), ops.reference)
    n_th = len(keep)
    n_p = g_count * horizon
    n_vars = n_p + n_th * horizon
    eye_h = sp.identity(horizon, format="csc")

    # objective
    branch_red = ops.branch[:, keep]
    q_theta = 2.0 * (branch_red.T @ sp.diags(ops.inv_limit) @ branch_red)
    hess = sp.block_diag([sp.csc_matrix((n_p, n_p)), sp.kron(eye_h, q_theta)], format="csc")
    hess = sp.triu(hess, format="csc")
    lin = np.concatenate([stage.noise.T.ravel(), np.zeros(n_th * horizon)])

    # nodal balance: L[:, keep] theta - C_g P = injection0
    lap_red = ops.laplacian[:, keep]
    a_bal = sp.hstack([sp.kron(eye_h, -ops.gen_bus), sp.kron(eye_h, lap_red)])
    b_bal = stage.injection0.ravel()

    # mean output per generator
    a_avail = sp.hstack(
        [sp.kron(np.ones((1, horizon)) / horizon, sp.identity(g_count)), sp.csc_matrix((g_count, n_th * horizon))]
    )
    b_avail = stage.target_mean

    # bounds
    sel = sp.hstack([sp.identity(n_p), sp.csc_matrix((n_p, n_th * horizon))])
    upper = np.tile(stage.upper, horizon)
    lower = np.tile(stage.lower, horizon)
    a_ramp, b_ramp = _ramp_rows(stage, n_vars)

    a_mat = sp.vstack([a_bal, a_avail, sel, -sel, a_ramp], format="csc")
    b_vec = np.concatenate([b_bal, b_avail, upper, -lower, b_ramp])
    n_eq = len(b_bal) + len(b_avail)
    cones = [clarabel.ZeroConeT(n_eq), clarabel.NonnegativeConeT(len(b_vec) - n_eq)]

    solver = clarabel.DefaultSolver(hess, lin, a_mat, b_vec, cones, _settings(tol))
    sol = solver.solve()
    status = sol.status
    if status in (clarabel.SolverStatus.PrimalInfeasible, clarabel.SolverStatus.AlmostPrimalInfeasible):
        raise DispatchInfeasible(f"dispatch QP {stage.label} is infeasible")
    if status not in (clarabel.SolverStatus.Solved, clarabel.SolverStatus.AlmostSolved):
        raise SolverError(f"dispatch QP {stage.label} failed with status {status}")
    if status == clarabel.SolverStatus.AlmostSolved:
        logger.warning("dispatch QP %s only reached reduced accuracy", stage.label)
    out = np.asarray(sol.x[:n_p]).reshape(horizon, g_count).T
    return _repair_equalities(out, stage)


def _repair_equalities(p: np.ndarray, stage: QPStage) -> np.ndarray:
    """Remove the solver's residual on the balance and mean-output equalities, then clip to bounds.

    The correction ``delta[i, t] = alpha_i + beta_t`` is the minimum-norm update
    fixing both families; it is of the order of the solver tolerance.
    """
    g_count, horizon = p.shape
    r = stage.demand - p.sum(axis=0)  # per step
    s = horizon * stage.target_mean - p.sum(axis=1)  # per generator
    worst = max(np.abs(r).max(), np.abs(s).max() / horizon)
    scale = max(1.0, np.abs(stage.demand).max())
    if worst > EQUALITY_REPAIR_MAX * scale:
        raise SolverError(f"dispatch QP {stage.label} returned equality residual {worst:.3g}")
    beta = r / g_count
    alpha = (s - r.sum() / g_count) / horizon
    out = p + alpha[:, None] + beta[None, :]
    return np.clip(out, stage.lower[:, None], stage.upper[:, None])


# ---------------------------------------------------------------------------
# stages of the yearly decomposition


def _week_slices(n_steps: int, week_len: int = HOURS_PER_WEEK) -> list[slice]:
    if n_steps % week_len:
        raise InputError(f"horizon of {n_steps} steps is not a whole number of weeks")
    return [slice(w * week_len, (w + 1) * week_len) for w in range(n_steps // week_len)]


def coarse_stage(problem: DispatchProblem, weeks: int | None = None) -> QPStage:
    n_steps = problem.n_steps
    weeks = weeks or n_steps // HOURS_PER_WEEK
    if n_steps % weeks:
        raise InputError(f"{n_steps} steps cannot be split into {weeks} equal windows")
    span = n_steps // weeks
    inj = problem.injection0.reshape(weeks, span, -1).mean(axis=1)
    noise = problem.noise.reshape(len(problem.gens), weeks, span).mean(axis=2)
    a, rated = problem.availability, problem.rated
    return QPStage(
        injection0=inj,
        noise=noise,
        lower=COARSE_LOW * a * rated,
        upper=(1.0 - COARSE_LOW + COARSE_LOW * a) * rated,
        target_mean=a * rated,
        ramp=np.full(len(a), np.inf),
        label="coarse",
    )


def solve_coarse(
    problem: DispatchProblem,
    weeks: int | None = None,
    ops: GridOperators | None = None,
) -> np.ndarray:
    """Weekly mean outputs (gens, weeks) from the week-averaged problem."""
    ops = ops or GridOperators.from_problem(problem)
    return solve_stage(coarse_stage(problem, weeks), ops)


def fine_stage(
    problem: DispatchProblem,
    week: int,
    target_mean: np.ndarray,
    prev_last: np.ndarray | None = None,
    next_first: np.ndarray | None = None,
    periodic: bool = False,
) -> QPStage:
    sl = _week_slices(problem.n_steps)[week]
    return QPStage(
        injection0=problem.injection0[sl],
        noise=problem.noise[:, sl],
        lower=np.zeros(len(problem.gens)),
        upper=problem.rated,
        target_mean=np.asarray(target_mean, dtype=float),
        ramp=problem.ramp,
        prev_last=prev_last,
        next_first=next_first,
        periodic=periodic,
        label=f"week {week + 1}",
    )


def nearest_feasible_targets(stage: QPStage) -> np.ndarray | None:
    """Weekly mean outputs closest (in L1) to ``stage.target_mean`` that admit an hourly schedule.

    Solved as a linear program over the hourly outputs with the mean-output
    equalities made elastic. Returns ``None`` when even the elastic problem is
    infeasible (balance or anchors cannot be met at all).
    """
    g_count, horizon = stage.n_gens, stage.horizon
    n_p = g_count * horizon
    n_vars = n_p + 2 * g_count
    a_bal = sp.hstack([sp.kron(sp.identity(horizon), np.ones((1, g_count))), sp.csc_matrix((horizon, 2 * g_count))])
    a_avail = sp.hstack(
        [sp.kron(np.ones((1, horizon)) / horizon, sp.identity(g_count)), sp.identity(g_count), -sp.identity(g_count)]
    )
    a_eq = sp.vstack([a_bal, a_avail], format="csc")
    b_eq = np.concatenate([stage.demand, stage.target_mean])
    a_ub, b_ub = _ramp_rows(stage, n_vars)
    bounds = np.column_stack(
        [
            np.concatenate([np.tile(stage.lower, horizon), np.zeros(2 * g_count)]),
            np.concatenate([np.tile(stage.upper, horizon), np.full(2 * g_count, np.inf)]),
        ]
    )
    cost = np.concatenate([np.zeros(n_p), np.ones(2 * g_count)])
    res = linprog(
        cost,
        A_ub=a_ub if a_ub.shape[0] else None,
        b_ub=b_ub if a_ub.shape[0] else None,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
    )
    if res.status != 0:
        return None
    x = res.x[:n_p].reshape(horizon, g_count)
    return x.mean(axis=0)


def solve_fine_week(
    problem: DispatchProblem,
    week: int,
    target_mean: np.ndarray,
    prev_last: np.ndarray | None = None,
    next_first: np.ndarray | None = None,
    periodic: bool = False,
    ops: GridOperators | None = None,
    retarget: bool = False,
) -> tuple[np.ndarray, QPStage]:
    """Hourly outputs (gens, 168) for one week.

    On infeasibility the ramp anchors are relaxed once (doubled). If the week
    is still infeasible and ``retarget`` is set, the weekly targets are moved
    to the nearest hourly-feasible values; the returned stage carries the
    targets actually used so the caller can redistribute the difference.
    """
    ops = ops or GridOperators.from_problem(problem)
    stage = fine_stage(problem, week, target_mean, prev_last, next_first, periodic)
    try:
        return solve_stage(stage, ops), stage
    except DispatchInfeasible:
        pass
    if prev_last is not None or next_first is not None:
        logger.warning("week %d infeasible with ramp anchors; doubling anchor ramp once", week + 1)
        stage = replace(stage, anchor_relax=2.0)
        try:
            return solve_stage(stage, ops), stage
        except DispatchInfeasible:
            pass
    if retarget:
        moved = nearest_feasible_targets(stage)
        if moved is not None:
            logger.warning(
                "week %d: weekly targets not reachable hour by hour; moved by up to %.3g pu",
                week + 1,
                float(np.abs(moved - stage.target_mean).max()),
            )
            stage = replace(stage, target_mean=moved)
            try:
                return solve_stage(stage, ops), stage
            except DispatchInfeasible:
                pass
    raise DispatchInfeasible("fine dispatch infeasible", stage="fine", week=week + 1)


def monolithic_stage(problem: DispatchProblem) -> QPStage:
    a, rated = problem.availability, problem.rated
    return QPStage(
        injection0=problem.injection0,
        noise=problem.noise,
        lower=np.zeros(len(a)),
        upper=rated,
        target_mean=a * rated,
        ramp=problem.ramp,
        periodic=True,
        label="monolithic",
    )


def solve_monolithic(problem: DispatchProblem, ops: GridOperators | None = None) -> np.ndarray:
    """Whole horizon in one QP (small problems; reference for the decomposition)."""
    ops = ops or GridOperators.from_problem(problem)
    return solve_stage(monolithic_stage(problem), ops)


@dataclass
class DispatchResult:
    table: Table
    schedule: np.ndarray  # (gens, steps), dispatchable only
    weekly_targets: np.ndarray  # (gens, weeks)
    rated: np.ndarray
    stages: list[QPStage] = field(default_factory=list)
    solutions: list[np.ndarray] = field(default_factory=list)

    @property
    def weekly_availability(self) -> np.ndarray:
        """Per-week availability factors ``A_i^(w)``."""
        return self.weekly_targets / self.rated[:, None]


def _periodic_ramp_violation(p: np.ndarray, ramp: np.ndarray) -> np.ndarray:
    return np.abs(p[:, -1] - p[:, 0]) > ramp + RAMP_TOL


def dispatch_detailed(problem: DispatchProblem, ops: GridOperators | None = None) -> DispatchResult:
    """Coarse weekly pass, then week-by-week hourly solves with sequential ramp anchoring."""
    ops = ops or GridOperators.from_problem(problem)
    slices = _week_slices(problem.n_steps)
    try:
        targets = solve_coarse(problem, len(slices), ops)
    except SolverError as exc:
        raise SolverError(str(exc), stage="coarse") from exc

    schedule = np.zeros((len(problem.gens), problem.n_steps))
    stages: list[QPStage] = []
    solutions: list[np.ndarray] = []
    single = len(slices) == 1
    prev = None
    for w, sl in enumerate(slices):
        last = w == len(slices) - 1
        p, stage = solve_fine_week(
            problem, w, targets[:, w], prev_last=prev, periodic=single, ops=ops, retarget=not last
        )
        shortfall = targets[:, w] - stage.target_mean
        if np.any(shortfall != 0):
            # keep the annual mean exact: spread the missed energy over the remaining weeks
            targets[:, w] = stage.target_mean
            targets[:, w + 1 :] += shortfall[:, None] / (len(slices) - w - 1)
        schedule[:, sl] = p
        stages.append(stage)
        solutions.append(p)
        prev = p[:, -1]

    if not single and np.any(_periodic_ramp_violation(schedule, problem.ramp)):
        logger.info("re-solving week 1 to close the periodic ramp wrap")
        p, stage = solve_fine_week(
            problem,
            0,
            targets[:, 0],
            prev_last=schedule[:, -1],
            next_first=schedule[:, slices[1].start],
            ops=ops,
        )
        schedule[:, slices[0]] = p
        stages[0], solutions[0] = stage, p

    table = assemble_gen_table(problem, schedule)
    return DispatchResult(table, schedule, targets, problem.rated, stages, solutions)


def dispatch_year(problem: DispatchProblem, ops: GridOperators | None = None) -> Table:
    return dispatch_detailed(problem, ops).table


def assemble_gen_table(problem: DispatchProblem, schedule: np.ndarray) -> Table:
    """Generator table in network order: dispatched columns plus the exogenous nuclear columns."""
    pos = {g.id: i for i, g in enumerate(problem.gens)}
    cols, values = [], []
    for g in problem.net.generators:
        if g.id in pos:
            values.append(schedule[pos[g.id]])
        else:
            values.append(problem.nuclear_profiles.column(g.id))
        cols.append(g.id)
    return Table(tuple(cols), np.column_stack(values) if values else np.zeros((problem.n_steps, 0)))


def schedule_from_table(problem: DispatchProblem, table: Table) -> np.ndarray:
    return table.select([g.id for g in problem.gens]).T
