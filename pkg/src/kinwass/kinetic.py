"""Kinetic Wasserstein machinery: the implicit distance root and flow quantities.

The kinetic distance weights the position cost by a state-dependent factor
lam(s) = |log s|^(p/2), extended by lam(s) = 0 for s >= 1 so the root solve
is total.  For a fixed coupling with position cost Cx and velocity cost Cv
the value is the unique root of

    g(s) = s - lam(s) * Cx' - Cv'        (' marks the form scaling)

on (0, 1) when it exists there, and simply Cv' under the extension otherwise.
g is strictly increasing because lam is strictly decreasing, so bisection in
log s followed by a Newton polish is reliable down to residuals ~1e-15.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import transport
from .core import (TORUS, WHOLE_SPACE, EmpiricalMeasure, Params, _readonly,
                   periodic_displacement)

METRIC = "metric"   # s = lam(s) Cx + Cv         (distance definition)
FLOW = "flow"       # s = (lam(s) Cx + Cv) / p   (flow quantity along pairings)

REGIME_OK = "in_regime"          # dp <= 1/e, log weight active and >= 1
REGIME_ABOVE = "above_regime"    # 1/e < dp < 1
REGIME_LAMBDA_OFF = "lambda_off" # dp >= 1, solved under the lam = 0 extension
REGIME_DEGENERATE = "degenerate" # coincident configurations, dp = 0

_ROOT_TOL = 1e-12
_LOG_FLOOR = math.log(1e-300)


class AlternationError(RuntimeError):
    """Raised when the plan/weight alternation for the kinetic distance stalls."""


def lam_weight(s: float, p: float) -> float:
    """Position-cost weight |log s|^(p/2) on (0,1), zero from 1 on, +inf at 0."""
    if s <= 0.0:
        return math.inf
    if s >= 1.0:
        return 0.0
    return (-math.log(s)) ** (0.5 * p)


@dataclass(frozen=True)
class KineticReport:
    """Solved implicit root together with its ingredients and regime flag."""

    cx: float
    cv: float
    lam: float
    dp: float
    residual: float
    form: str
    regime: str
    time: float = 0.0

    def csv_row(self) -> str:
        return (f"{self.time:.17g},{self.cx:.17g},{self.cv:.17g},{self.lam:.17g},"
                f"{self.dp:.17g},{self.residual:.17g},{self.regime}")


KINETIC_REPORT_HEADER = "t,Cx,Cv,lambda,dp,residual,regime_flag"


def _classify(dp: float) -> str:
    if dp == 0.0:
        return REGIME_DEGENERATE
    if dp <= 1.0 / math.e:
        return REGIME_OK
    if dp < 1.0:
        return REGIME_ABOVE
    return REGIME_LAMBDA_OFF


def solve_dp_implicit(cx: float, cv: float, p: float, form: str = METRIC) -> KineticReport:
    """Unique root of the implicit kinetic-distance equation for given costs.

    form = "metric" solves s = lam(s)*Cx + Cv; form = "flow" carries the 1/p
    prefactor of the flow quantity.  Roots at or above 1 are produced by the
    lam = 0 extension and flagged in the report.
    """
    if form not in (METRIC, FLOW):
        raise ValueError(f"unknown form {form!r}")
    if not (np.isfinite(cx) and np.isfinite(cv)) or cx < 0 or cv < 0:
        raise ValueError(f"costs must be finite and nonnegative, got Cx={cx}, Cv={cv}")
    scale = 1.0 if form == METRIC else 1.0 / p
    cxs, cvs = cx * scale, cv * scale

    if cxs == 0.0 and cvs == 0.0:
        return KineticReport(cx, cv, math.inf, 0.0, 0.0, form, REGIME_DEGENERATE)
    if cvs >= 1.0 or cxs == 0.0:
        dp = cvs
        lam = lam_weight(dp, p)
        residual = abs(dp - lam * cxs - cvs)
        return KineticReport(cx, cv, lam, dp, residual, form, _classify(dp))

    def g(s: float) -> float:
        return s - lam_weight(s, p) * cxs - cvs

    # bisection in t = log s: g is increasing, g(0+) = -inf, g(1-) = 1 - Cv' > 0
    lo, hi = _LOG_FLOOR, -1e-18
    if g(math.exp(lo)) > 0:
        lo_s = math.exp(lo)  # root below the floor cannot occur with cxs > 0
        raise RuntimeError(f"bracket failure at s={lo_s}")
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if g(math.exp(mid)) <= 0.0:
            lo = mid
        else:
            hi = mid
    s = math.exp(0.5 * (lo + hi))

    # Newton polish; the slope at the root is bounded by 1 + p/2
    for _ in range(60):
        val = g(s)
        if abs(val) <= 1e-16:
            break
        mlog = -math.log(s)
        slope = 1.0 + cxs * 0.5 * p * mlog ** (0.5 * p - 1.0) / s
        step = val / slope
        s_new = s - step
        if not (0.0 < s_new < 1.0):
            s_new = 0.5 * (s + (0.0 if step > 0 else 1.0))
        if s_new == s:
            break
        s = s_new

    lam = lam_weight(s, p)
    residual = abs(s - lam * cxs - cvs)
    if residual > _ROOT_TOL:
        raise RuntimeError(f"root residual {residual:.3e} above {_ROOT_TOL}")
    return KineticReport(cx, cv, lam, s, residual, form, _classify(s))


@dataclass(frozen=True)
class PairedEnsemble:
    """Weighted pairs ((X1,V1),(X2,V2)) realizing a transported coupling.

    The left components form an empirical measure for the first solution and
    the right components for the second; the pairing itself is the coupling,
    transported by the flows and never re-matched.
    """

    x1: np.ndarray
    v1: np.ndarray
    x2: np.ndarray
    v2: np.ndarray
    weights: np.ndarray
    time_stamp: float = 0.0
    domain: str = TORUS

    def __post_init__(self):
        arrs = {}
        for name in ("x1", "v1", "x2", "v2"):
            arrs[name] = np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64))
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        shape = arrs["x1"].shape
        if any(a.shape != shape for a in arrs.values()) or w.shape[0] != shape[0]:
            raise ValueError("pair arrays must share one shape")
        if shape[0] == 0:
            raise ValueError("empty ensemble rejected")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1 within 1e-12")
        if self.domain not in (TORUS, WHOLE_SPACE):
            raise ValueError(f"unknown domain {self.domain!r}")
        for name, a in arrs.items():
            object.__setattr__(self, name, _readonly(a))
        object.__setattr__(self, "weights", _readonly(w))

    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.x1.shape[1]

    def left(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.x1, self.v1, self.weights)

    def right(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.x2, self.v2, self.weights)

    def subsample(self, idx: np.ndarray) -> "PairedEnsemble":
        n = len(idx)
        return PairedEnsemble(self.x1[idx], self.v1[idx], self.x2[idx], self.v2[idx],
                              np.full(n, 1.0 / n), self.time_stamp, self.domain)


def pair_costs(ensemble: PairedEnsemble, p: float):
    """Per-pair position and velocity costs |X1-X2|^p, |V1-V2|^p."""
    dx = ensemble.x1 - ensemble.x2
    if ensemble.domain == TORUS:
        dx = periodic_displacement(ensemble.x1, ensemble.x2)
    dv = ensemble.v1 - ensemble.v2
    cx = np.sqrt(np.sum(dx * dx, axis=-1)) ** p
    cv = np.sqrt(np.sum(dv * dv, axis=-1)) ** p
    return cx, cv


def qp_of_pairing(ensemble: PairedEnsemble, p: float) -> float:
    """Flow quantity: weighted sum of |X1-X2|^p + |V1-V2|^p over the pairing."""
    cx, cv = pair_costs(ensemble, p)
    return float(np.sum(ensemble.weights * (cx + cv)))


def dp_flow_quantity(ensemble: PairedEnsemble, p: float) -> KineticReport:
    """Implicit flow quantity of the pairing (1/p prefactor form)."""
    cx, cv = pair_costs(ensemble, p)
    total_cx = float(np.sum(ensemble.weights * cx))
    total_cv = float(np.sum(ensemble.weights * cv))
    rep = solve_dp_implicit(total_cx, total_cv, p, form=FLOW)
    return replace(rep, time=ensemble.time_stamp)


def kinetic_distance_report(mu: EmpiricalMeasure, nu: EmpiricalMeasure, params: Params,
                            lam_tol: float = 1e-10, max_iter: int = 200,
                            **plan_kwargs):
    """Kinetic Wasserstein distance by alternating plan and weight updates.

    Alternates an exact transport solve at frozen lam with the implicit root
    update lam <- |log s|^(p/2).  Each accepted plan can only lower the root
    (the new plan is cheaper at the frozen lam and g is increasing in s), so
    the iterates decrease monotonically and any fixed point attains the
    infimum over couplings.  Returns (distance, KineticReport).
    """
    plan = transport.optimal_plan(mu, nu, params, kind=transport.PHASE, **plan_kwargs)
    cx, cv = transport.plan_part_costs(plan, mu, nu, params)
    rep = solve_dp_implicit(cx, cv, params.p, form=METRIC)
    if rep.dp == 0.0:
        return 0.0, rep
    lam = rep.lam
    trace = [lam]
    for _ in range(max_iter):
        plan = transport.optimal_plan(mu, nu, params, kind=transport.KINETIC,
                                      lam=lam, **plan_kwargs)
        cx, cv = transport.plan_part_costs(plan, mu, nu, params)
        rep = solve_dp_implicit(cx, cv, params.p, form=METRIC)
        if rep.dp == 0.0:
            return 0.0, rep
        lam_new = rep.lam
        trace.append(lam_new)
        if abs(lam_new - lam) < lam_tol:
            return rep.dp ** (1.0 / params.p), rep
        lam = lam_new
    raise AlternationError(f"no convergence after {max_iter} alternations; "
                           f"lam trace tail {trace[-6:]}")


def kinetic_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure, params: Params,
                     **kwargs) -> float:
    value, _ = kinetic_distance_report(mu, nu, params, **kwargs)
    return value
