"""Closed-form stability bounds, their smallness conditions, and an ODE oracle.

Both bounds are double-log Gronwall envelopes driven by the time integral of
the density statistic A(t).  The growth constants are not pinned down by the
underlying estimates, so they live in BoundConstants (default 1.0) and every
emitted trace records the values used.  Out-of-regime evaluations are
computed but flagged, never refused, so diagnostic curves stay complete.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

TORUS = "torus"
WHOLE_SPACE = "whole_space"

LOEPER = "loeper"
KINETIC = "kinetic"

BOUND_TRACE_HEADER = "t,Wp_measured,loeper_bound,kinetic_bound,intA,cond_loeper,cond_kinetic"


@dataclass(frozen=True)
class BoundConstants:
    """Growth and projection constants left unquantified by the estimates.

    All default to 1.0 and are meant to be overridden from configuration;
    every emitted bound records the values in force.
    """

    C_L: float = 1.0
    C_KW: float = 1.0
    C_HW: float = 1.0
    C_loglip: float = 1.0
    C_d: float = 1.0
    c_0: float = 1.0

    def __post_init__(self):
        for name in ("C_L", "C_KW", "C_HW", "C_loglip", "C_d", "c_0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


def phi_p(s, p: float, d: int):
    """Concave comparison function: s log^p((4 sqrt d)^p / s), capped.

    Below the breakpoint (4 sqrt(d)/e)^p the value is s log^p((4 sqrt d)^p/s);
    above it the function is constant (4 p sqrt(d)/e)^p, and the two branches
    agree at the breakpoint.  phi_p(0) = 0 by the limit.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < 0):
        raise ValueError("phi_p needs s >= 0")
    diam_p = (4.0 * math.sqrt(d)) ** p
    brk = diam_p * math.exp(-p)
    cap = (4.0 * p * math.sqrt(d) / math.e) ** p
    safe = np.where(s_arr > 0, s_arr, 1.0)
    lower = np.where(s_arr > 0, safe * np.log(diam_p / safe) ** p, 0.0)
    out = np.where(s_arr <= brk, lower, cap)
    return float(out) if np.isscalar(s) or np.ndim(s) == 0 else out


def cp_const(p: float) -> float:
    """Elementary-inequality constant 2 (1 + log p + p/2)."""
    if p <= 1.0:
        raise ValueError("p must exceed 1")
    return 2.0 * (1.0 + math.log(p) + 0.5 * p)


def ckw_formula(p: float, d: int, C: float, C_HW: float, domain: str = TORUS) -> float:
    """Assembled kinetic growth constant from the log-Lipschitz and field constants.

    Torus:       p [1 + C (C_p + p log(4 sqrt d)) + C_HW] / 2
    Whole space: p [1 + 2^(1/p) C (C_p + p log(4 sqrt d)) + C_HW] / 2
    so the two branches agree when the whole-space constant carries the extra
    2^(1/p) factor.
    """
    core = cp_const(p) + p * math.log(4.0 * math.sqrt(d))
    if domain == TORUS:
        tilde = p * (1.0 + C * core + C_HW)
    elif domain == WHOLE_SPACE:
        tilde = p * (1.0 + 2.0 ** (1.0 / p) * C * core + C_HW)
    else:
        raise ValueError(f"unknown domain {domain!r}")
    return 0.5 * tilde


@dataclass(frozen=True)
class ConditionFlag:
    """Outcome of a smallness + integral condition check."""

    ok: bool
    smallness_ok: bool
    integral_ok: bool
    note: str = ""
    inner_value: float = math.nan

    def __bool__(self) -> bool:
        return self.ok


def loeper_condition(w0p: float, intA: float, consts: BoundConstants,
                     p: float, d: int) -> ConditionFlag:
    """Smallness w0p <= (4 sqrt d / e)^p plus the initial-gap condition.

    The gap condition compares |log(w0p / (4 sqrt d)^p)| against
    p exp(-C_L intA); w0p = 0 is vacuously fine and annotated.
    """
    if w0p < 0:
        raise ValueError("w0p must be nonnegative")
    if w0p == 0.0:
        return ConditionFlag(True, True, True, note="zero initial distance", inner_value=0.0)
    diam_p = (4.0 * math.sqrt(d)) ** p
    small = w0p <= diam_p * math.exp(-p)
    gap = abs(math.log(w0p / diam_p))
    integral = gap >= p * math.exp(-consts.C_L * intA)
    return ConditionFlag(small and integral, small, integral, inner_value=gap)


def loeper_bound(w0p: float, intA_t: float, consts: BoundConstants,
                 p: float, d: int) -> float:
    """Double-exponential envelope (4 sqrt d)^p exp{log(w0p/(4 sqrt d)^p) e^{-C_L intA}}.

    Collapses to w0p exactly at intA_t = 0; the log factor relaxes to 0 from
    below as intA grows, so the envelope rises monotonically toward the
    diameter cap (4 sqrt d)^p.
    """
    if w0p <= 0:
        return 0.0
    if intA_t == 0.0:
        return w0p
    diam_p = (4.0 * math.sqrt(d)) ** p
    return diam_p * math.exp(math.log(w0p / diam_p) * math.exp(-consts.C_L * intA_t))


def kinetic_inner(w0p: float, p: float) -> float:
    """Inner expression X = w0p |log(w0p / p)| entering the kinetic bound."""
    if w0p <= 0:
        return 0.0
    return w0p * abs(math.log(w0p / p))


def kinetic_condition(w0p: float, intA_T: float, consts: BoundConstants,
                      p: float) -> ConditionFlag:
    """Smallness w0p <= p c_0 plus sqrt|log X| >= C_KW intA_T + 1, X the inner value.

    For the square root to track the decay regime, X must sit below 1; an X
    at or above 1 is annotated and fails the check.
    """
    if w0p < 0:
        raise ValueError("w0p must be nonnegative")
    if w0p == 0.0:
        return ConditionFlag(True, True, True, note="zero initial distance", inner_value=0.0)
    small = w0p <= p * consts.c_0
    x = kinetic_inner(w0p, p)
    if x >= 1.0:
        return ConditionFlag(False, small, False,
                             note="inner expression left the decay regime (X >= 1)",
                             inner_value=x)
    integral = math.sqrt(abs(math.log(x))) >= consts.C_KW * intA_T + 1.0
    return ConditionFlag(small and integral, small, integral, inner_value=x)


def kinetic_bound(w0p: float, intA_t: float, consts: BoundConstants, p: float) -> float:
    """Envelope p exp{-(sqrt|log X| - C_KW intA)^2} with X = w0p |log(w0p/p)|.

    Collapses to p X at intA_t = 0 for in-regime w0p (X < 1); the squared
    argument may go negative past the valid horizon, which callers flag via
    kinetic_argument.
    """
    if w0p <= 0:
        return 0.0
    x = kinetic_inner(w0p, p)
    if intA_t == 0.0 and x < 1.0:
        return p * x
    root = math.sqrt(abs(math.log(x)))
    return p * math.exp(-(root - consts.C_KW * intA_t) ** 2)


def kinetic_argument(w0p: float, intA_t: float, consts: BoundConstants, p: float) -> float:
    """sqrt|log X| - C_KW intA_t; the bound derivation is valid while this is >= 1."""
    x = kinetic_inner(w0p, p)
    if x <= 0:
        return math.inf
    return math.sqrt(abs(math.log(x))) - consts.C_KW * intA_t


def horizon_compare(delta: float):
    """Closeness horizons of the two envelopes: (log|log delta|, sqrt|log delta|)."""
    if not (0.0 < delta < 1.0 / math.e):
        raise ValueError("delta must lie in (0, 1/e)")
    gap = abs(math.log(delta))
    return math.log(gap), math.sqrt(gap)


# --- ODE oracle -------------------------------------------------------------

@dataclass(frozen=True)
class OracleTrace:
    """RK4 solution of the growth ODE matching a closed-form envelope."""

    times: np.ndarray
    values: np.ndarray
    flavor: str
    truncated: bool


def gronwall_oracle(times, a_values, w0p: float, consts: BoundConstants,
                    p: float, d: int, flavor: str,
                    substeps_total: int = 4000) -> OracleTrace:
    """Integrate the growth ODE with equality and report the envelope curve.

    loeper flavor:  Q' = C_L A(t) Q log((4 sqrt d)^p / Q), Q(0) = w0p; the
    closed form is exactly its solution.
    kinetic flavor: D' = 2 C_KW A(t) D sqrt|log D| started from the inner
    value X = w0p |log(w0p/p)|; p times the result matches the closed-form
    envelope.  Leaving the decay regime truncates the trace and flags it.
    """
    times = np.asarray(times, dtype=np.float64)
    a_values = np.asarray(a_values, dtype=np.float64)
    if times.ndim != 1 or times.shape != a_values.shape or times.size < 2:
        raise ValueError("need matching 1d time and A arrays with >= 2 samples")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")

    if flavor == LOEPER:
        diam_p = (4.0 * math.sqrt(d)) ** p
        regime_cap = diam_p * math.exp(-p)
        y0 = w0p

        def rhs(t, y):
            a = np.interp(t, times, a_values)
            return consts.C_L * a * y * math.log(diam_p / y)

        def in_regime(y):
            return 0.0 < y <= regime_cap
    elif flavor == KINETIC:
        y0 = kinetic_inner(w0p, p)
        regime_cap = 1.0 / math.e

        def rhs(t, y):
            a = np.interp(t, times, a_values)
            return 2.0 * consts.C_KW * a * y * math.sqrt(abs(math.log(y)))

        def in_regime(y):
            return 0.0 < y <= regime_cap
    else:
        raise ValueError(f"unknown flavor {flavor!r}")

    if not in_regime(y0):
        raise ValueError(f"initial value {y0!r} outside the {flavor} regime")

    span = times[-1] - times[0]
    out_t = [times[0]]
    out_y = [y0]
    truncated = False
    y = y0
    for k in range(len(times) - 1):
        t0, t1 = times[k], times[k + 1]
        n_sub = max(2, int(round(substeps_total * (t1 - t0) / span)))
        h = (t1 - t0) / n_sub
        for i in range(n_sub):
            t = t0 + i * h
            k1 = rhs(t, y)
            k2 = rhs(t + 0.5 * h, min(y + 0.5 * h * k1, regime_cap))
            k3 = rhs(t + 0.5 * h, min(y + 0.5 * h * k2, regime_cap))
            k4 = rhs(t + h, min(y + h * k3, regime_cap))
            y_new = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not in_regime(y_new):
                truncated = True
                break
            y = y_new
        if truncated:
            break
        out_t.append(t1)
        out_y.append(y)
    return OracleTrace(np.array(out_t), np.array(out_y), flavor, truncated)


# --- trace assembly ----------------------------------------------------------

@dataclass(frozen=True)
class BoundTraceRow:
    t: float
    wp_measured: float
    loeper: float
    kinetic: float
    intA: float
    cond_loeper: bool
    cond_kinetic: bool
    dp_in_regime: bool
    loeper_violated: bool
    kinetic_violated: bool

    @property
    def violation_explained(self) -> bool:
        """A violated bound must come with a failed condition or regime exit."""
        flags_ok = True
        if self.loeper_violated:
            flags_ok &= not self.cond_loeper or not self.dp_in_regime
        if self.kinetic_violated:
            flags_ok &= not self.cond_kinetic or not self.dp_in_regime
        return flags_ok


@dataclass(frozen=True)
class BoundTrace:
    rows: tuple
    constants: BoundConstants
    p: float
    d: int
    w0p: float

    def csv_lines(self):
        yield BOUND_TRACE_HEADER
        for r in self.rows:
            yield (f"{r.t:.17g},{r.wp_measured:.17g},{r.loeper:.17g},"
                   f"{r.kinetic:.17g},{r.intA:.17g},{int(r.cond_loeper)},"
                   f"{int(r.cond_kinetic)}")


def cumulative_trapezoid(times, values):
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros_like(times)
    out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
    return out


def assemble_bound_trace(times, a_values, wp_measured_p, dp_values,
                         consts: BoundConstants, p: float, d: int,
                         w0p: Optional[float] = None) -> BoundTrace:
    """Evaluate both envelopes along a run and flag conditions rowwise.

    wp_measured_p carries the measured W_p^p curve; dp_values the flow
    quantity, used for the regime flag dp <= 1/e.  intA is the running
    trapezoid of A.
    """
    times = np.asarray(times, dtype=np.float64)
    int_a = cumulative_trapezoid(times, a_values)
    wp_measured_p = np.asarray(wp_measured_p, dtype=np.float64)
    dp_values = np.asarray(dp_values, dtype=np.float64)
    w0 = float(wp_measured_p[0]) if w0p is None else w0p
    rows = []
    for k in range(times.size):
        lb = loeper_bound(w0, float(int_a[k]), consts, p, d)
        kb = kinetic_bound(w0, float(int_a[k]), consts, p)
        cl = bool(loeper_condition(w0, float(int_a[k]), consts, p, d))
        ck = bool(kinetic_condition(w0, float(int_a[k]), consts, p)
                  ) and kinetic_argument(w0, float(int_a[k]), consts, p) >= 1.0
        meas = float(wp_measured_p[k])
        rows.append(BoundTraceRow(
            t=float(times[k]), wp_measured=meas, loeper=lb, kinetic=kb,
            intA=float(int_a[k]), cond_loeper=cl, cond_kinetic=ck,
            dp_in_regime=bool(dp_values[k] <= 1.0 / math.e),
            loeper_violated=meas > lb * (1.0 + 1e-9),
            kinetic_violated=meas > kb * (1.0 + 1e-9)))
    return BoundTrace(tuple(rows), consts, p, d, w0)


def fit_condition_boundary(w0p: float, intA_T: float, p: float,
                           floor: float = 1e-6) -> float:
    """Constant value at which the kinetic initial condition holds with equality.

    Over a fixed horizon the kinetic condition sqrt|log X| >= C intA + 1
    admits exactly the constants C <= (sqrt|log X| - 1)/intA; the returned
    boundary value is the one that certifies precisely the requested horizon.
    Used with C_L = C_KW for end-to-end consistency runs.
    """
    x = kinetic_inner(w0p, p)
    if not (0.0 < x < 1.0 / math.e):
        raise ValueError(f"inner value {x!r} outside the decay regime")
    if intA_T <= 0:
        raise ValueError("needs a positive integrated A")
    return max(floor, (math.sqrt(abs(math.log(x))) - 1.0) / intA_T)


def estimate_c0(p: float, n_grid: int = 2000) -> float:
    """Largest c_0 on a grid validating s/|log s| <= tau  =>  s <= p tau |log tau|.

    The map s -> s/|log s| is increasing on (0,1), so its inverse h is found
    by bisection and the implication reduces to h(tau) <= p tau |log tau| for
    all tau <= c_0.  Reported, not asserted: the value is an empirical grid
    scan, monotone in p.
    """
    def inv_ratio(tau):
        lo, hi = 1e-300, 1.0 - 1e-12
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid / abs(math.log(mid)) <= tau:
                lo = mid
            else:
                hi = mid
        return lo

    taus = np.exp(np.linspace(math.log(1e-6), math.log(0.999), n_grid))
    best = 0.0
    for tau in taus:
        if inv_ratio(tau) <= p * tau * abs(math.log(tau)):
            best = tau
        else:
            break
    return float(best)
