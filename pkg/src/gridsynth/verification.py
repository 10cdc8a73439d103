"""Independent checks of dispatch output.

Nothing here reuses the solver's formulation: flows come from a dense
transfer matrix, the objective is re-evaluated in generator space, and KKT
stationarity is tested by fitting multipliers with bounded least squares.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .dc_power_flow import FlowOperator
from .dispatch_opf import DispatchProblem, QPStage, feasible_point, schedule_from_table
from .errors import InputError
from .grid_model import Network, generator_bus_matrix
from .tables import Table

FAMILIES = ("bounds", "balance", "availability", "ramp", "nuclear")


@dataclass
class VerificationReport:
    residuals: dict[str, float]
    objective: float
    flow_term: float
    noise_term: float
    feasible_objective: float | None = None
    worst_step: dict[str, int] = field(default_factory=dict)

    def ok(self, tol: dict[str, float] | None = None) -> bool:
        tol = tol or {"bounds": 1e-8, "balance": 1e-6, "availability": 1e-6, "ramp": 1e-8, "nuclear": 0.0}
        return all(self.residuals[k] <= tol.get(k, 1e-6) for k in self.residuals)

    def as_text(self) -> str:
        out = [f"{k}: {self.residuals[k]:.3e}" for k in FAMILIES if k in self.residuals]
        out.append(f"objective: {self.objective:.10g} (flow {self.flow_term:.6g}, noise {self.noise_term:.6g})")
        if self.feasible_objective is not None:
            out.append(f"objective at constant schedule: {self.feasible_objective:.10g}")
        return "\n".join(out)


def dense_ptdf(net: Network) -> np.ndarray:
    """Lines x buses transfer matrix from the Laplacian pseudo-inverse."""
    op = FlowOperator(net)
    lap = op.laplacian.toarray()
    return op.branch.toarray() @ np.linalg.pinv(lap)


def objective_terms(
    net: Network,
    gens,
    schedule: np.ndarray,
    injection0: np.ndarray,
    noise: np.ndarray,
    ptdf: np.ndarray | None = None,
) -> tuple[float, float]:
    """Flow penalty ``sum phi^2 / limit`` and noise cost ``sum c P`` of a (gens, steps) schedule."""
    ptdf = dense_ptdf(net) if ptdf is None else ptdf
    cg = generator_bus_matrix(net, gens).toarray()
    inj = injection0.T + cg @ schedule  # buses x steps
    flows = ptdf @ inj
    limits = np.array([ln.thermal_limit for ln in net.lines])
    return float(np.sum(flows**2 / limits[:, None])), float(np.sum(noise * schedule))


def verify_solution(
    problem: DispatchProblem,
    gens_table: Table,
    ramp_tol: float = 0.0,
    with_feasible: bool = True,
) -> VerificationReport:
    """Maximum violation per constraint family, plus the objective value.

    Ramps are checked periodically (last step against the first).
    """
    sched = schedule_from_table(problem, gens_table)
    rated = problem.rated[:, None]
    bounds = np.maximum(-sched, sched - rated)
    balance = np.abs(sched.sum(axis=0) - problem.demand)
    avail = np.abs(sched.mean(axis=1) - problem.availability * problem.rated)
    res = {
        "bounds": max(0.0, float(bounds.max())),
        "balance": float(balance.max()),
        "availability": float(avail.max()),
    }
    worst = {"balance": int(np.argmax(balance))}

    ramped = np.isfinite(problem.ramp)
    if ramped.any():
        p = sched[ramped]
        steps = np.abs(np.diff(np.concatenate([p, p[:, :1]], axis=1), axis=1))
        over = steps - problem.ramp[ramped][:, None] - ramp_tol
        res["ramp"] = max(0.0, float(over.max()))
        worst["ramp"] = int(np.unravel_index(np.argmax(over), over.shape)[1])
    else:
        res["ramp"] = 0.0

    nuc = 0.0
    for g in problem.net.nuclear:
        nuc = max(nuc, float(np.max(np.abs(gens_table.column(g.id) - problem.nuclear_profiles.column(g.id)))))
    res["nuclear"] = nuc

    ptdf = dense_ptdf(problem.net)
    flow, noise = objective_terms(problem.net, problem.gens, sched, problem.injection0, problem.noise, ptdf)
    feasible = None
    if with_feasible:
        try:
            base = feasible_point(problem)
        except InputError:
            base = None
        if base is not None:
            feasible = sum(objective_terms(problem.net, problem.gens, base, problem.injection0, problem.noise, ptdf))
    return VerificationReport(res, flow + noise, flow, noise, feasible, worst)


# ---------------------------------------------------------------------------
# QP in generator space (small instances)


@dataclass(frozen=True)
class DenseQP:
    """``min 1/2 x'Hx + f'x  s.t.  A x = b,  G x <= h`` with ``x`` = outputs ordered (step, gen)."""

    hess: np.ndarray
    lin: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    g_in: np.ndarray
    h_in: np.ndarray
    const: float

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.hess @ x + self.lin @ x + self.const)


def dense_stage_qp(stage: QPStage, net: Network, gens) -> DenseQP:
    """Rewrite a dispatch stage with flows eliminated through the transfer matrix."""
    n_g, horizon = stage.n_gens, stage.horizon
    ptdf = dense_ptdf(net)
    limits = np.array([ln.thermal_limit for ln in net.lines])
    cg = generator_bus_matrix(net, gens).toarray()
    m = ptdf @ cg  # lines x gens
    w = m.T @ (m / limits[:, None])  # gens x gens
    eye_h = np.eye(horizon)
    hess = 2.0 * np.kron(eye_h, w)
    base = ptdf @ stage.injection0.T  # lines x steps
    lin = stage.noise.T.ravel() + 2.0 * (m.T @ (base / limits[:, None])).T.ravel()
    const = float(np.sum(base**2 / limits[:, None]))

    a_bal = np.kron(eye_h, np.ones((1, n_g)))
    a_avail = np.kron(np.ones((1, horizon)) / horizon, np.eye(n_g))
    a_eq = np.vstack([a_bal, a_avail])
    b_eq = np.concatenate([stage.demand, stage.target_mean])

    n = n_g * horizon
    rows, rhs = [np.eye(n), -np.eye(n)], [np.tile(stage.upper, horizon), -np.tile(stage.lower, horizon)]

    def unit(t, i):
        v = np.zeros(n)
        v[t * n_g + i] = 1.0
        return v

    pairs = [(t, t + 1) for t in range(horizon - 1)]
    if stage.periodic and horizon > 1:
        pairs.append((horizon - 1, 0))
    for i in np.flatnonzero(np.isfinite(stage.ramp)):
        d = stage.ramp[i]
        for t0, t1 in pairs:
            diff = unit(t1, i) - unit(t0, i)
            rows += [diff[None], -diff[None]]
            rhs += [[d], [d]]
        da = d * stage.anchor_relax
        if stage.prev_last is not None:
            rows += [unit(0, i)[None], -unit(0, i)[None]]
            rhs += [[da + stage.prev_last[i]], [da - stage.prev_last[i]]]
        if stage.next_first is not None:
            rows += [unit(horizon - 1, i)[None], -unit(horizon - 1, i)[None]]
            rhs += [[da + stage.next_first[i]], [da - stage.next_first[i]]]
    g_in = np.vstack(rows)
    h_in = np.concatenate([np.asarray(r, dtype=float).ravel() for r in rhs])
    return DenseQP(hess, lin, a_eq, b_eq, g_in, h_in, const)


@dataclass(frozen=True)
class KKTReport:
    stationarity: float  # relative
    primal_eq: float
    primal_in: float
    n_active: int

    def worst(self) -> float:
        return max(self.stationarity, self.primal_eq, self.primal_in)


def kkt_residual(qp: DenseQP, x: np.ndarray, active_tol: float = 1e-6) -> KKTReport:
    """Relative KKT residual of ``x`` with multipliers fitted by bounded least squares.

    Inequalities whose slack is within ``active_tol`` (relative to the right-hand
    side scale) are treated as active and get a non-negative multiplier;
    equality multipliers are free. Stationarity is reported relative to the
    gradient norm.
    """
    grad = qp.hess @ x + qp.lin
    slack = qp.h_in - qp.g_in @ x
    scale = max(1.0, float(np.abs(qp.h_in).max()))
    active = slack <= active_tol * scale
    mat = np.vstack([qp.a_eq, qp.g_in[active]]).T
    n_eq = qp.a_eq.shape[0]
    lo = np.concatenate([np.full(n_eq, -np.inf), np.zeros(int(active.sum()))])
    hi = np.full(mat.shape[1], np.inf)
    fit = lsq_linear(mat, -grad, bounds=(lo, hi), method="bvls", tol=1e-14, lsmr_tol="auto")
    resid = grad + mat @ fit.x
    gscale = max(1.0, float(np.abs(grad).max()))
    beq = max(1.0, float(np.abs(qp.b_eq).max()))
    return KKTReport(
        stationarity=float(np.abs(resid).max() / gscale),
        primal_eq=float(np.abs(qp.a_eq @ x - qp.b_eq).max() / beq),
        primal_in=float(max(0.0, -slack.min()) / scale),
        n_active=int(active.sum()),
    )


def stage_vector(schedule: np.ndarray) -> np.ndarray:
    """(gens, steps) schedule to the (step, gen) variable ordering of :class:`DenseQP`."""
    return np.asarray(schedule).T.ravel()
