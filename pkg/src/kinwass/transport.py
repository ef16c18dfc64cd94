"""Optimal transport engine: exact discrete plans, entropic approximation, W_p.

The exact solver is the transportation linear program handed to HiGHS, which
returns a basic optimal plan together with dual potentials; optimality is
certified from the duals before the plan is accepted.  Uniform equal-size
instances dispatch to the assignment solver, which is exact by Birkhoff's
theorem and much faster.  Large instances fall back to log-domain Sinkhorn.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .core import (TORUS, Coupling, EmpiricalMeasure, Params, FLOAT_FMT,
                   periodic_displacement, validate_coupling)

PHASE = "phase"
POSITION = "position"
KINETIC = "kinetic"

DEFAULT_SIZE_CAP = 2000 * 2000
DUAL_CERT_TOL = 1e-9
ORACLE_MAX = 8


class SolverError(RuntimeError):
    pass


class SinkhornError(SolverError):
    """Raised when Sinkhorn fails to reach the marginal tolerance."""


class SizeCapError(SolverError):
    pass


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise transport costs between two sample sets."""

    entries: np.ndarray
    kind: str
    lam: Optional[float] = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2:
            raise ValueError("cost entries must be a 2d array")
        if np.any(e < 0) or not np.all(np.isfinite(e)):
            raise ValueError("cost entries must be finite and nonnegative")
        e = e.copy()
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class TransportPlan:
    """A coupling together with its achieved objective and solver metadata."""

    coupling: Coupling
    objective: float
    dual_residual: Optional[float] = None
    iterations: Optional[int] = None


def _pairwise_pth(a: np.ndarray, b: np.ndarray, p: float, periodic: bool) -> np.ndarray:
    """|a_i - b_j|^p for batches of points, with the wrap metric if periodic."""
    diff = a[:, None, :] - b[None, :, :]
    if periodic:
        diff = np.mod(diff + 0.5, 1.0) - 0.5
    return np.sqrt(np.sum(diff * diff, axis=-1)) ** p


def cost_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure, kind: str,
                params: Params, lam: Optional[float] = None) -> CostMatrix:
    """Assemble the |mu| x |nu| cost matrix for the requested cost kind.

    phase:    |x-y|^p + |v-w|^p
    position: |x-y|^p
    kinetic:  lam*|x-y|^p + |v-w|^p with lam >= 0
    """
    if mu.d != nu.d:
        raise ValueError(f"dimension mismatch: {mu.d} vs {nu.d}")
    if mu.d != params.d:
        raise ValueError(f"measures are {mu.d}-dimensional, params say {params.d}")
    periodic = params.domain == TORUS
    pos = _pairwise_pth(mu.positions, nu.positions, params.p, periodic)
    if kind == POSITION:
        return CostMatrix(pos, kind)
    vel = _pairwise_pth(mu.velocities, nu.velocities, params.p, periodic=False)
    if kind == PHASE:
        return CostMatrix(pos + vel, kind)
    if kind == KINETIC:
        if lam is None or lam < 0:
            raise ValueError("kinetic cost needs lam >= 0")
        return CostMatrix(lam * pos + vel, kind, lam=lam)
    raise ValueError(f"unknown cost kind {kind!r}")


def _plan_from_dense(x: np.ndarray) -> Coupling:
    i, j = np.nonzero(x > 0)
    return Coupling(i, j, x[i, j])


def solve_exact(cost: CostMatrix, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                size_cap: int = DEFAULT_SIZE_CAP) -> TransportPlan:
    """Optimal plan for the discrete transportation LP, certified by duals.

    Raises SizeCapError above the configured |mu|*|nu| cap and SolverError if
    HiGHS fails or the dual feasibility certificate exceeds 1e-9.
    """
    n, m = cost.shape
    if (n, m) != (len(mu), len(nu)):
        raise ValueError("cost matrix shape does not match the measures")
    if n * m > size_cap:
        raise SizeCapError(f"instance {n}x{m} exceeds cap {size_cap}")
    c = cost.entries
    rows = sparse.kron(sparse.eye(n, format="csr"), np.ones((1, m)), format="csr")
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m, format="csr"), format="csr")
    a_eq = sparse.vstack([rows, cols], format="csr")
    b_eq = np.concatenate([mu.weights, nu.weights])
    res = linprog(c.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(n, m)
    u = res.eqlin.marginals[:n]
    v = res.eqlin.marginals[n:]
    slack = u[:, None] + v[None, :] - c
    cert = max(0.0, float(slack.max()))
    gap = abs(float(mu.weights @ u + nu.weights @ v) - float(res.fun))
    cert = max(cert, gap)
    if cert > DUAL_CERT_TOL:
        raise SolverError(f"dual certificate residual {cert:.3e} exceeds {DUAL_CERT_TOL}")
    coupling = _plan_from_dense(plan)
    objective = float(np.sum(plan * c))
    return TransportPlan(coupling, objective, dual_residual=cert)


def solve_assignment(cost: CostMatrix, n: int) -> TransportPlan:
    """Exact plan for uniform weights and equal sizes via the assignment problem."""
    if cost.shape != (n, n):
        raise ValueError("assignment path needs a square cost matrix")
    rows, cols = linear_sum_assignment(cost.entries)
    mass = np.full(n, 1.0 / n)
    objective = float(cost.entries[rows, cols].mean())
    return TransportPlan(Coupling(rows, cols, mass), objective)


def solve_sinkhorn(cost: CostMatrix, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                   eps: float, tol: float = 1e-9, max_iter: int = 20000,
                   scaling: float = 0.5) -> TransportPlan:
    """Entropic plan by log-domain Sinkhorn with epsilon scaling.

    The regularization is annealed geometrically from the cost scale down to
    the requested eps, warm-starting the potentials at every level; a cold
    start at small eps would need O(max(C)/eps) iterations.  Stops when the
    unsatisfied marginal residual (sup norm) drops below tol at the final
    level; raises SinkhornError instead of returning an unconverged plan.
    """
    if eps <= 0:
        raise ValueError("regularization eps must be positive")
    if not 0 < scaling < 1:
        raise ValueError("scaling factor must lie in (0, 1)")
    if np.any(mu.weights == 0) or np.any(nu.weights == 0):
        raise ValueError("sinkhorn requires strictly positive weights")
    c = cost.entries
    log_a = np.log(mu.weights)
    log_b = np.log(nu.weights)
    f = np.zeros(len(mu))
    g = np.zeros(len(nu))
    levels = [eps]
    top = max(float(c.max()), eps)
    while levels[-1] < top:
        levels.append(levels[-1] / scaling)
    levels.reverse()
    total_it = 0
    log_plan = None
    for lev in levels:
        level_tol = tol if lev == eps else max(tol, 1e-2 * lev)
        while True:
            if total_it >= max_iter:
                raise SinkhornError(
                    f"no convergence after {max_iter} iterations "
                    f"(residual {residual:.3e} at eps level {lev:.3e}, tol {tol:.1e})")
            total_it += 1
            f = -lev * logsumexp((g[None, :] - c) / lev + log_b[None, :], axis=1)
            g = -lev * logsumexp((f[:, None] - c) / lev + log_a[:, None], axis=0)
            # columns are exact right after the g-update; track the row residual
            log_plan = ((f[:, None] + g[None, :] - c) / lev
                        + log_a[:, None] + log_b[None, :])
            row = np.exp(logsumexp(log_plan, axis=1))
            residual = float(np.max(np.abs(row - mu.weights)))
            if residual <= level_tol:
                break
    plan = np.exp(log_plan)
    plan /= plan.sum()
    objective = float(np.sum(plan * c))
    return TransportPlan(_plan_from_dense(plan), objective, iterations=total_it)


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.all(np.abs(w - 1.0 / w.size) < 1e-15))


def optimal_plan(mu: EmpiricalMeasure, nu: EmpiricalMeasure, params: Params,
                 kind: str = PHASE, lam: Optional[float] = None,
                 size_cap: int = DEFAULT_SIZE_CAP, sinkhorn_eps: float = 1e-3,
                 sinkhorn_tol: float = 1e-9, sinkhorn_max_iter: int = 20000) -> TransportPlan:
    """Dispatch to assignment / LP / Sinkhorn depending on instance shape and size."""
    cm = cost_matrix(mu, nu, kind, params, lam=lam)
    n, m = cm.shape
    if n == m and _is_uniform(mu.weights) and _is_uniform(nu.weights):
        return solve_assignment(cm, n)
    if n * m <= size_cap:
        return solve_exact(cm, mu, nu, size_cap=size_cap)
    return solve_sinkhorn(cm, mu, nu, sinkhorn_eps, tol=sinkhorn_tol,
                          max_iter=sinkhorn_max_iter)


def plan_part_costs(plan: TransportPlan, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                    params: Params):
    """Position and velocity transport costs (Cx, Cv) carried by a plan."""
    i, j, w = plan.coupling.i, plan.coupling.j, plan.coupling.mass
    dx = mu.positions[i] - nu.positions[j]
    if params.domain == TORUS:
        dx = np.mod(dx + 0.5, 1.0) - 0.5
    dv = mu.velocities[i] - nu.velocities[j]
    cx = float(np.sum(w * np.sqrt(np.sum(dx * dx, axis=-1)) ** params.p))
    cv = float(np.sum(w * np.sqrt(np.sum(dv * dv, axis=-1)) ** params.p))
    return cx, cv


def wp_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure, params: Params,
                kind: str = PHASE, **kwargs) -> float:
    """Wasserstein distance of order p: p-th root of the optimal objective."""
    plan = optimal_plan(mu, nu, params, kind=kind, **kwargs)
    return plan.objective ** (1.0 / params.p)


def enumerate_assignment_minimum(cost: CostMatrix) -> float:
    """Brute-force assignment minimum over all permutations; oracle/debug only."""
    n, m = cost.shape
    if n != m or n > ORACLE_MAX:
        raise ValueError(f"enumeration oracle limited to square instances up to {ORACLE_MAX}")
    c = cost.entries
    best = math.inf
    for perm in itertools.permutations(range(n)):
        val = sum(c[i, perm[i]] for i in range(n)) / n
        best = min(best, val)
    return best


# --- plan dump: one metadata line objective=<value>, then i,j,mass rows ---

def save_plan(path, plan: TransportPlan):
    with open(path, "w") as fh:
        fh.write(f"objective={plan.objective:.17g}\n")
        fh.write("i,j,mass\n")
        for i, j, m in zip(plan.coupling.i, plan.coupling.j, plan.coupling.mass):
            fh.write(f"{i},{j},{FLOAT_FMT % m}\n")


def load_plan(path) -> TransportPlan:
    with open(path) as fh:
        meta = fh.readline().strip()
        if not meta.startswith("objective="):
            raise ValueError(f"missing objective metadata line in {path}")
        objective = float(meta.split("=", 1)[1])
        header = fh.readline().strip()
        if header != "i,j,mass":
            raise ValueError(f"unexpected plan header {header!r}")
        rows = [line.split(",") for line in fh if line.strip()]
    i = np.array([int(r[0]) for r in rows])
    j = np.array([int(r[1]) for r in rows])
    mass = np.array([float(r[2]) for r in rows])
    return TransportPlan(Coupling(i, j, mass), objective)
