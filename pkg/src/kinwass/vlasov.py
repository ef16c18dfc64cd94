"""Paired-characteristics particle-in-cell Vlasov-Poisson simulator.

Two solutions are advanced along their own characteristic flows from a shared
initial coupling: each particle is a pair ((X1,V1),(X2,V2)) whose halves feel
the field of their own population only.  The pairing is set once at t = 0 as
a (near-)optimal coupling of the two initial profiles and is transported,
never re-matched, so the flow quantities evaluated on it bound the
Wasserstein distances from above at every time.

Deposition and force gathering both use cloud-in-cell weights; with the
spectral field solve this gives exact self-force cancellation and exact mass
conservation.  All reductions are bincount-based and order-fixed, so a run is
bit-reproducible for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import kinetic, transport
from .core import (TORUS, WHOLE_SPACE, EmpiricalMeasure, FieldGrid, GridDensity,
                   Params, wrap_torus)
from .fields import lp_norm_field, solve_force_free_space_1d, solve_poisson_torus
from .kinetic import PairedEnsemble, dp_flow_quantity, qp_of_pairing

AMPLITUDE_PAIR = "amplitude_pair"
VELOCITY_PAIR = "velocity_pair"
IDENTICAL_PAIR = "identical_pair"
FAMILIES = (AMPLITUDE_PAIR, VELOCITY_PAIR, IDENTICAL_PAIR)

DIAG_HEADER = "t,Qp,Dp,lambda,A,sup_rho1,sup_rho2,energy1,energy2,Wp_sub"


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Run description: discretization, initial-condition family, guards."""

    params: Params
    n_particles: int = 100_000
    cells: int = 512
    dt: float = 1e-3
    horizon: float = 2.0
    family: str = AMPLITUDE_PAIR
    eps1: float = 0.01
    eps2: float = 0.02
    mode: int = 1
    vth: float = 0.08
    vshift: float = 0.0
    seed: int = 0
    subsample: int = 500
    cfl_safety: float = 1.0
    sup_cap: float = 1e3
    v_cap: float = 1e3
    grid_origin: float = -2.0   # whole space only
    grid_span: float = 4.0      # whole space only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown initial-condition family {self.family!r}")
        if self.dt <= 0 or self.horizon < 0:
            raise ValueError("dt must be positive and horizon nonnegative")
        if self.n_particles < 1 or self.cells < 2:
            raise ValueError("need at least one particle and two cells")
        if max(abs(self.eps1), abs(self.eps2)) >= 1.0:
            raise ValueError("perturbation amplitude too large for a positive density")
        v_max = abs(self.vshift) + 6.0 * self.vth
        if self.dt * v_max > self.cell_size * self.cfl_safety:
            raise ValueError(
                f"CFL guard: dt*v_max = {self.dt * v_max:.3e} exceeds "
                f"cell*safety = {self.cell_size * self.cfl_safety:.3e}")

    @property
    def cell_size(self) -> float:
        if self.params.domain == TORUS:
            return 1.0 / self.cells
        return self.grid_span / self.cells

    @property
    def origin(self) -> float:
        return 0.0 if self.params.domain == TORUS else self.grid_origin

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class SimState:
    """Immutable snapshot: paired ensemble, deposited densities, solved forces."""

    ensemble: PairedEnsemble
    rho1: GridDensity
    rho2: GridDensity
    force1: FieldGrid
    force2: FieldGrid
    time: float
    diagnostics: dict


# --- cloud-in-cell deposit / gather ---------------------------------------

def deposit(x: np.ndarray, weights: np.ndarray, cells: int, cell_size: float,
            origin: float, domain: str) -> GridDensity:
    """CIC density on the grid; total mass equals the particle mass exactly."""
    x = np.atleast_2d(x)
    n, d = x.shape
    xi = (x - origin) / cell_size
    g = np.floor(xi).astype(np.int64)
    frac = xi - g
    if domain == TORUS:
        g = np.mod(g, cells)
    elif np.any(g < 0) or np.any(g + 1 >= cells):
        raise BlowUpError("particle left the whole-space grid")
    shape = (cells,) * d
    rho = np.zeros(shape)
    flat = rho.ravel()
    # accumulate the 2^d corner weights per particle
    for corner in range(1 << d):
        idx = np.zeros(n, dtype=np.int64)
        wgt = weights.copy()
        for ax in range(d):
            take_hi = (corner >> ax) & 1
            gax = g[:, ax] + take_hi
            if domain == TORUS:
                gax = np.mod(gax, cells)
            idx = idx * cells + gax
            wgt = wgt * (frac[:, ax] if take_hi else 1.0 - frac[:, ax])
        flat += np.bincount(idx, weights=wgt, minlength=flat.size)
    rho /= cell_size ** d
    mass = float(rho.sum() * cell_size ** d)
    return GridDensity(rho, cell_size, origin=origin, mass=mass)


def gather(fieldgrid: FieldGrid, x: np.ndarray, domain: str) -> np.ndarray:
    """CIC interpolation of the field components at particle positions."""
    x = np.atleast_2d(x)
    n, d = x.shape
    cells = fieldgrid.components[0].shape[0]
    cell_size, origin = fieldgrid.cell_size, fieldgrid.origin
    xi = (x - origin) / cell_size
    g = np.floor(xi).astype(np.int64)
    frac = xi - g
    if domain == TORUS:
        g = np.mod(g, cells)
    out = np.zeros((n, d))
    for corner in range(1 << d):
        idx = np.zeros(n, dtype=np.int64)
        wgt = np.ones(n)
        for ax in range(d):
            take_hi = (corner >> ax) & 1
            gax = g[:, ax] + take_hi
            if domain == TORUS:
                gax = np.mod(gax, cells)
            idx = idx * cells + gax
            wgt = wgt * (frac[:, ax] if take_hi else 1.0 - frac[:, ax])
        for c in range(d):
            out[:, c] += wgt * fieldgrid.components[c].ravel()[idx]
    return out


def solve_field(rho: GridDensity, config: SimConfig) -> FieldGrid:
    if config.params.domain == TORUS:
        return solve_poisson_torus(rho, config.params.sigma).force
    return solve_force_free_space_1d(rho, config.params.sigma)


# --- initial conditions -----------------------------------------------------

def _perturbed_cdf_sample(u: np.ndarray, eps: float, mode: int) -> np.ndarray:
    """Inverse-CDF samples of rho(x) = 1 + eps cos(2 pi k x) on [0,1)."""
    if eps == 0.0:
        return u.copy()
    tpk = 2.0 * math.pi * mode
    x = u.copy()
    for _ in range(60):
        f = x + eps * np.sin(tpk * x) / tpk - u
        df = 1.0 + eps * np.cos(tpk * x)
        step = f / df
        x -= step
        if np.max(np.abs(step)) < 1e-15:
            break
    return wrap_torus(x)


def _amplitude_map(x: np.ndarray, eps1: float, eps2: float, mode: int) -> np.ndarray:
    """Monotone map pushing 1 + eps1 cos onto 1 + eps2 cos along the first axis.

    Both profiles are symmetric about x = 0, so the zero mass-level cut is
    the optimal one and T = F2^{-1} o F1 coordinate-wise.
    """
    tpk = 2.0 * math.pi * mode
    levels = x + eps1 * np.sin(tpk * x) / tpk
    return _perturbed_cdf_sample(np.mod(levels, 1.0), eps2, mode)


def _bump_profile(config: SimConfig, eps: float, n_grid: int = 4096):
    """Compactly supported raised-cosine profile with a relative perturbation."""
    span, origin = config.grid_span, config.grid_origin
    half = 0.25 * span
    center = origin + 0.5 * span
    xs = np.linspace(center - half, center + half, n_grid)
    base = (1.0 + np.cos(math.pi * (xs - center) / half)) / (2.0 * half)
    vals = base * (1.0 + eps * np.cos(2.0 * math.pi * config.mode * (xs - center) / half))
    vals = np.maximum(vals, 0.0)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1])
                                           * np.diff(xs))])
    cdf /= cdf[-1]
    return xs, cdf


def init_paired(config: SimConfig) -> SimState:
    """Sample f1(0), pair each sample with its optimal image under f2(0).

    amplitude_pair couples through the per-slice monotone rearrangement of
    the spatial profiles (velocities shared), velocity_pair through the
    velocity translation, identical_pair through the identity.
    """
    rng = np.random.default_rng(config.seed)
    n, d = config.n_particles, config.params.d
    v1 = config.vth * rng.standard_normal((n, d))

    if config.params.domain == TORUS:
        x1 = rng.random((n, d))
        x1[:, 0] = _perturbed_cdf_sample(x1[:, 0], config.eps1, config.mode)
    else:
        if d != 1:
            raise ValueError("whole-space runs are one-dimensional")
        xs, cdf = _bump_profile(config, config.eps1)
        x1 = np.interp(rng.random((n, 1)), cdf, xs)

    x2, v2 = x1.copy(), v1.copy()
    if config.family == AMPLITUDE_PAIR:
        if config.params.domain == TORUS:
            x2 = x1.copy()
            x2[:, 0] = _amplitude_map(x1[:, 0], config.eps1, config.eps2, config.mode)
        else:
            xs2, cdf2 = _bump_profile(config, config.eps2)
            xs1, cdf1 = _bump_profile(config, config.eps1)
            lev = np.interp(x1[:, 0], xs1, cdf1)
            x2 = np.interp(lev, cdf2, xs2)[:, None]
    elif config.family == VELOCITY_PAIR:
        v2 = v1.copy()
        v2[:, 0] = v1[:, 0] + config.vshift

    weights = np.full(n, 1.0 / n)
    ensemble = PairedEnsemble(x1, v1, x2, v2, weights, 0.0, config.params.domain)
    return _snapshot(ensemble, config, rng_seed_for_subsample=config.seed)


def _energies(ensemble: PairedEnsemble, f1: FieldGrid, f2: FieldGrid,
              sigma: int) -> tuple:
    out = []
    for v, fg in ((ensemble.v1, f1), (ensemble.v2, f2)):
        ke = 0.5 * float(np.sum(ensemble.weights * np.sum(v * v, axis=-1)))
        fe = float(sum(np.sum(c * c) for c in fg.components) * fg.cell_size ** fg.d)
        out.append(ke - 0.5 * sigma * fe)
    return tuple(out)


def subsample_indices(n: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed + 987654321)
    return rng.choice(n, size=min(k, n), replace=False)


def subsample_wp(ensemble: PairedEnsemble, params: Params, k: int, seed: int):
    """Exact W_p on a fixed-size pair subsample, plus the Q_p sampling error.

    Returns (wp, qp_sub, se) where se is the standard error of the subsample
    mean of per-pair costs.
    """
    idx = subsample_indices(len(ensemble), k, seed)
    sub = ensemble.subsample(idx)
    cx, cv = kinetic.pair_costs(sub, params.p)
    costs = cx + cv
    qp_sub = float(costs.mean())
    se = float(costs.std(ddof=1) / math.sqrt(costs.size)) if costs.size > 1 else 0.0
    plan = transport.optimal_plan(sub.left(), sub.right(), params, kind=transport.PHASE)
    return plan.objective ** (1.0 / params.p), qp_sub, se


def _snapshot(ensemble: PairedEnsemble, config: SimConfig,
              rng_seed_for_subsample: int) -> SimState:
    cfg_p = config.params
    rho1 = deposit(ensemble.x1, ensemble.weights, config.cells, config.cell_size,
                   config.origin, cfg_p.domain)
    rho2 = deposit(ensemble.x2, ensemble.weights, config.cells, config.cell_size,
                   config.origin, cfg_p.domain)
    f1 = solve_field(rho1, config)
    f2 = solve_field(rho2, config)
    qp = qp_of_pairing(ensemble, cfg_p.p)
    dp_rep = dp_flow_quantity(ensemble, cfg_p.p)
    a_val = compute_A(rho1, rho2, cfg_p)
    e1, e2 = _energies(ensemble, f1, f2, cfg_p.sigma)
    wp_sub, qp_sub, se = subsample_wp(ensemble, cfg_p, config.subsample,
                                      rng_seed_for_subsample)
    mom1 = ensemble.weights @ ensemble.v1
    mom2 = ensemble.weights @ ensemble.v2
    diag = {
        "t": ensemble.time_stamp, "Qp": qp, "Dp": dp_rep.dp, "lambda": dp_rep.lam,
        "A": a_val, "sup_rho1": rho1.sup, "sup_rho2": rho2.sup,
        "energy1": e1, "energy2": e2, "Wp_sub": wp_sub,
        "Qp_sub": qp_sub, "se_sub": se, "dp_regime": dp_rep.regime,
        "momentum1": float(np.linalg.norm(mom1)),
        "momentum2": float(np.linalg.norm(mom2)),
    }
    return SimState(ensemble, rho1, rho2, f1, f2, ensemble.time_stamp, diag)


def compute_A(rho1: GridDensity, rho2: GridDensity, params: Params) -> float:
    """Density statistic driving both stability bounds.

    A = sup rho2 + (sup rho1)^(1/p) * max(sup rho1, sup rho2)^(1/p').
    """
    s1, s2 = rho1.sup, rho2.sup
    return s2 + s1 ** (1.0 / params.p) * max(s1, s2) ** (1.0 / params.p_conj)


def _accelerations(x, weights, config) -> tuple:
    rho = deposit(x, weights, config.cells, config.cell_size, config.origin,
                  config.params.domain)
    force = solve_field(rho, config)
    acc = -gather(force, x, config.params.domain)
    return acc, rho, force


def _advance(x1, v1, x2, v2, weights, f1, f2, config, dt):
    """One kick-drift-kick step of both populations under their own fields."""
    domain = config.params.domain
    a1 = -gather(f1, x1, domain)
    a2 = -gather(f2, x2, domain)
    v1h = v1 + 0.5 * dt * a1
    v2h = v2 + 0.5 * dt * a2
    x1n = x1 + dt * v1h
    x2n = x2 + dt * v2h
    if domain == TORUS:
        x1n, x2n = wrap_torus(x1n), wrap_torus(x2n)
    a1n, rho1, f1n = _accelerations(x1n, weights, config)
    a2n, rho2, f2n = _accelerations(x2n, weights, config)
    v1n = v1h + 0.5 * dt * a1n
    v2n = v2h + 0.5 * dt * a2n
    if max(np.max(np.abs(v1n)), np.max(np.abs(v2n))) > config.v_cap:
        raise BlowUpError("velocity overflow guard tripped")
    if max(rho1.sup, rho2.sup) >= config.sup_cap:
        raise BlowUpError(f"density blow-up guard tripped (sup >= {config.sup_cap})")
    return x1n, v1n, x2n, v2n, rho1, rho2, f1n, f2n


def step_leapfrog(state: SimState, config: SimConfig,
                  dt: Optional[float] = None) -> SimState:
    """Advance a snapshot by one step; dt may be negated for reverse stepping."""
    dt = config.dt if dt is None else dt
    e = state.ensemble
    x1, v1, x2, v2, rho1, rho2, f1, f2 = _advance(
        e.x1.copy(), e.v1.copy(), e.x2.copy(), e.v2.copy(), e.weights,
        state.force1, state.force2, config, dt)
    ensemble = PairedEnsemble(x1, v1, x2, v2, e.weights, e.time_stamp + dt,
                              e.domain)
    return _snapshot(ensemble, config, rng_seed_for_subsample=config.seed)


@dataclass
class RunResult:
    states: list
    blow_up: bool = False
    blow_up_message: str = ""
    w0p: float = 0.0

    def diagnostics_rows(self):
        for st in self.states:
            d = st.diagnostics
            yield (f"{d['t']:.17g},{d['Qp']:.17g},{d['Dp']:.17g},{d['lambda']:.17g},"
                   f"{d['A']:.17g},{d['sup_rho1']:.17g},{d['sup_rho2']:.17g},"
                   f"{d['energy1']:.17g},{d['energy2']:.17g},{d['Wp_sub']:.17g}")


def run_paired(config: SimConfig, snapshot_times) -> RunResult:
    """Evolve the paired ensemble, collecting snapshots at the requested times.

    Snapshot times are rounded to the step grid.  A tripped blow-up guard
    aborts the run and returns the snapshots collected so far, flagged.
    """
    snap_steps = sorted({int(round(t / config.dt)) for t in snapshot_times})
    if snap_steps and (snap_steps[0] < 0 or snap_steps[-1] > config.n_steps):
        raise ValueError("snapshot times outside the run horizon")
    init = init_paired(config)
    e = init.ensemble
    x1, v1 = e.x1.copy(), e.v1.copy()
    x2, v2 = e.x2.copy(), e.v2.copy()
    weights = e.weights
    f1, f2 = init.force1, init.force2
    states = []
    if snap_steps and snap_steps[0] == 0:
        states.append(init)
    result = RunResult(states, w0p=init.diagnostics["Wp_sub"] ** config.params.p)
    remaining = [s for s in snap_steps if s > 0]
    try:
        for step in range(1, config.n_steps + 1):
            x1, v1, x2, v2, rho1, rho2, f1, f2 = _advance(
                x1, v1, x2, v2, weights, f1, f2, config, config.dt)
            if remaining and step == remaining[0]:
                remaining.pop(0)
                ens = PairedEnsemble(x1.copy(), v1.copy(), x2.copy(), v2.copy(),
                                     weights, step * config.dt, config.params.domain)
                states.append(_snapshot(ens, config, config.seed))
            if not remaining and step >= (snap_steps[-1] if snap_steps else 0):
                break
    except BlowUpError as err:
        result.blow_up = True
        result.blow_up_message = str(err)
    return result
