"""Lossless DC power flow: net injections to line flows.

Flows are ``B M^T (M B M^T)^+ p``. The Laplacian pseudo-inverse is never
formed; injections are projected onto the zero-sum subspace and the grounded
Laplacian (reference bus removed) is factored once with a sparse LU.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np
from scipy.sparse.linalg import splu

from .errors import NetworkError, TableError
from .grid_model import Network, _components, build_matrices
from .tables import Table

BALANCE_TOL = 1e-8
DEFAULT_THRESHOLDS = (0.8, 1.0, 1.2)


class FlowOperator:
    """Reusable factorized map from bus injections to line flows."""

    def __init__(self, net: Network, reference: int | str = 0):
        n_comp, _ = _components(net)
        if n_comp != 1:
            raise NetworkError(f"flow operator needs a connected network, found {n_comp} components")
        mats = build_matrices(net)
        self.n_bus, self.n_line = mats.incidence.shape
        if isinstance(reference, str):
            reference = net.bus_index[reference]
        self.reference = int(reference)
        self.branch = (mats.susceptance @ mats.incidence.T).tocsr()  # lines x buses
        self.laplacian = (mats.incidence @ mats.susceptance @ mats.incidence.T).tocsc()
        self.thermal = mats.thermal
        self.keep = np.delete(np.arange(self.n_bus), self.reference)
        if self.n_bus > 1:
            self._lu = splu(self.laplacian[self.keep][:, self.keep].tocsc())

    def angles(self, injections: np.ndarray) -> np.ndarray:
        """Voltage angles (reference bus at zero) for injections of shape (buses,) or (buses, k)."""
        p = np.asarray(injections, dtype=float)
        if p.shape[0] != self.n_bus:
            raise ValueError(f"expected {self.n_bus} bus injections, got {p.shape[0]}")
        p = p - p.mean(axis=0)
        theta = np.zeros_like(p)
        if self.n_bus > 1:
            theta[self.keep] = self._lu.solve(np.ascontiguousarray(p[self.keep]))
        return theta

    def __call__(self, injections: np.ndarray) -> np.ndarray:
        return self.branch @ self.angles(injections)

    def ptdf(self) -> np.ndarray:
        """Dense lines x buses sensitivity matrix (small networks only)."""
        return self(np.eye(self.n_bus))


def flow_operator(net: Network, reference: int | str = 0) -> FlowOperator:
    return FlowOperator(net, reference)


def bus_injections(net: Network, loads: Table, gens: Table) -> np.ndarray:
    """Per-bus net injection, shape (steps, buses): generation minus load."""
    if loads.n_steps != gens.n_steps:
        raise TableError("load and generator tables have different lengths")
    idx = net.bus_index
    inj = np.zeros((loads.n_steps, len(net.buses)))
    for j, label in enumerate(loads.columns):
        if label not in idx:
            raise TableError(f"load column {label!r} is not a bus of the network")
        inj[:, idx[label]] -= loads.values[:, j]
    gidx = net.gen_index
    for j, label in enumerate(gens.columns):
        if label not in gidx:
            raise TableError(f"generator column {label!r} is not a generator of the network")
        inj[:, idx[net.generators[gidx[label]].bus]] += gens.values[:, j]
    return inj


def flows_for_table(
    net: Network,
    loads: Table,
    gens: Table,
    op: FlowOperator | None = None,
    tol: float = BALANCE_TOL,
) -> Table:
    """Line-flow table for every step of a load/generator table pair."""
    op = op or FlowOperator(net)
    inj = bus_injections(net, loads, gens)
    imbalance = np.abs(inj.sum(axis=1))
    bad = np.flatnonzero(imbalance > tol)
    if bad.size:
        t = int(bad[0])
        raise TableError(f"injections unbalanced by {imbalance[t]:.3g} pu at step {t}")
    flows = op(inj.T).T
    return Table(tuple(ln.id for ln in net.lines), flows)


def loading_fractions(
    flows,
    limits: np.ndarray,
    thresholds: Iterable[float] = DEFAULT_THRESHOLDS,
) -> dict[float, float]:
    """Fraction of (line, step) pairs with ``|flow| / limit >= threshold``."""
    vals = flows.values if isinstance(flows, Table) else np.asarray(flows, dtype=float)
    limits = np.asarray(limits, dtype=float)
    if np.any(limits <= 0):
        raise ValueError("thermal limits must be positive")
    ratio = np.abs(vals) / limits
    return {float(th): float(np.mean(ratio >= th)) for th in thresholds}


def line_limits(net: Network, labels: Iterable[str] | None = None) -> np.ndarray:
    if labels is None:
        return np.array([ln.thermal_limit for ln in net.lines])
    idx = net.line_index
    return np.array([net.lines[idx[l]].thermal_limit for l in labels])
