"""Poisson solvers, Helmholtz splitting, Sobolev-type norms, estimate checks.

Torus solves are spectral on [0,1)^d with integer wavenumbers, so band-limited
manufactured solutions are reproduced to rounding.  The whole-space solver is
the d = 1 cumulative form of the fundamental solution.  The estimate checkers
compare the force-difference norm against the density-distance bound and the
log-Lipschitz modulus, reporting measured constants rather than asserting
unquantified ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import TORUS, WHOLE_SPACE, FieldGrid, GridDensity, Params
from .rearrange1d import wasserstein_atoms_1d

NEUTRALITY_TOL = 1e-8
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class PoissonSolution:
    """Zero-mean potential, its gradient field, and the spectral residual."""

    potential: np.ndarray
    force: FieldGrid
    residual: float
    density: GridDensity
    sigma: int


@dataclass(frozen=True)
class EstimateReport:
    """One measured inequality instance: lhs vs rhs and their ratio."""

    lhs: float
    rhs: float
    ratio: float
    p: float
    descriptor: str
    d: int = 1
    domain: str = TORUS
    cells: int = 0
    seed: int = 0

    def csv_row(self) -> str:
        return (f"{self.p:.17g},{self.d},{self.domain},{self.lhs:.17g},"
                f"{self.rhs:.17g},{self.ratio:.17g},{self.cells},{self.seed}")


ESTIMATE_HEADER = "p,d,domain,lhs,rhs,ratio,cells,seed"


def _wavenumbers(shape):
    """Integer frequency grids, one array per axis, broadcast to shape."""
    axes = [np.fft.fftfreq(n, d=1.0 / n) for n in shape]
    return np.meshgrid(*axes, indexing="ij", sparse=True)


def _wavenumbers_odd(shape):
    """Frequencies with the Nyquist mode zeroed, for odd spectral operators.

    The Nyquist frequency on an even grid is its own conjugate partner and
    does not change sign under k -> -k, so gradients and direction vectors
    built from it would break conjugate symmetry; zeroing it keeps every odd
    operator real and skew-adjoint.
    """
    axes = []
    for n in shape:
        m = np.fft.fftfreq(n, d=1.0 / n)
        if n % 2 == 0:
            m = m.copy()
            m[n // 2] = 0.0
        axes.append(m)
    return np.meshgrid(*axes, indexing="ij", sparse=True)


def solve_poisson_torus(rho: GridDensity, sigma: int) -> PoissonSolution:
    """Spectral solve of sigma * Lap(U) = rho - 1 on the unit torus.

    Requires background neutrality (mean density 1 within 1e-8); the k = 0
    mode of the potential is pinned to zero.
    """
    v = rho.values
    for n in v.shape:
        if abs(rho.cell_size - 1.0 / n) > 1e-12:
            raise ValueError("torus grid must satisfy cell_size = 1/M per axis")
    mean = float(v.mean())
    if abs(mean - 1.0) > NEUTRALITY_TOL:
        raise ValueError(f"non-neutral density: mean {mean!r} (needs 1 within {NEUTRALITY_TOL})")
    rhs = v - mean
    rhs_hat = np.fft.fftn(rhs)
    ms = _wavenumbers(v.shape)
    k2 = sum((2.0 * math.pi * m) ** 2 for m in ms)
    with np.errstate(divide="ignore", invalid="ignore"):
        u_hat = -rhs_hat / (sigma * k2)
    u_hat[(0,) * v.ndim] = 0.0
    potential = np.fft.ifftn(u_hat).real
    ms_odd = _wavenumbers_odd(v.shape)
    comps = tuple(np.fft.ifftn(2.0j * math.pi * m * u_hat).real for m in ms_odd)
    lap = np.fft.ifftn(-k2 * u_hat).real
    residual = float(np.max(np.abs(sigma * lap - rhs)))
    return PoissonSolution(potential, FieldGrid(comps, rho.cell_size, rho.origin),
                           residual, rho, sigma)


def solve_force_free_space_1d(rho: GridDensity, sigma: int) -> FieldGrid:
    """Gradient of the potential with sigma * U'' = rho on the line.

    U' is the half-difference of mass to the left and right, evaluated with a
    midpoint cumulative so a symmetric density gives an antisymmetric force.
    """
    v = rho.values
    if v.ndim != 1:
        raise ValueError("whole-space solver is one-dimensional")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite mass")
    h = rho.cell_size
    cum = (np.cumsum(v) - 0.5 * v) * h
    grad = sigma * (cum - 0.5 * rho.mass)
    return FieldGrid((grad,), h, rho.origin)


def helmholtz_project(u: FieldGrid, p: float = 2.0):
    """Split a periodic field into its gradient and divergence-free parts.

    The splitting operator is the same for every p in (1, inf): per mode the
    gradient part is the projection of u_hat onto the wavevector, the
    divergence-free part the complement; the k = 0 (constant) mode has zero
    divergence and belongs to the divergence-free part.
    """
    if not (1.0 < p < math.inf):
        raise ValueError("the splitting holds for 1 < p < inf only")
    if u.d not in (1, 2):
        raise ValueError("implemented for d in {1, 2}")
    hats = [np.fft.fftn(c) for c in u.components]
    ms = _wavenumbers_odd(u.components[0].shape)
    k2 = sum(np.asarray(m, dtype=np.float64) ** 2 for m in ms)
    dot = sum(m * h for m, h in zip(ms, hats))
    with np.errstate(divide="ignore", invalid="ignore"):
        coeff = dot / k2
    coeff[k2 == 0.0] = 0.0
    grad_hats = [coeff * m for m in ms]
    grad = tuple(np.fft.ifftn(gh).real for gh in grad_hats)
    divfree = tuple(c - g for c, g in zip(u.components, grad))
    cell, origin = u.cell_size, u.origin
    return FieldGrid(grad, cell, origin), FieldGrid(divfree, cell, origin)


def lp_norm_field(u: FieldGrid, p: float) -> float:
    """Quadrature L^p norm of the field magnitude over its grid."""
    if not (1.0 < p < math.inf):
        raise ValueError("p must lie in (1, inf)")
    mag = u.magnitude()
    d = mag.ndim
    return float(np.sum(mag ** p) * u.cell_size ** d) ** (1.0 / p)


def dual_sobolev_norm_p2(h_values: np.ndarray, cell_size: float) -> float:
    """Dual homogeneous Sobolev norm at p = 2 of a zero-mean torus sample.

    Computed as the L^2 norm of grad(Lap^{-1} h), which is exact at p = 2
    because there the splitting is orthogonal.
    """
    v = np.asarray(h_values, dtype=np.float64)
    if abs(v.mean()) > 1e-10:
        raise ValueError(f"nonzero mean {v.mean()!r}")
    hat = np.fft.fftn(v)
    ms = _wavenumbers(v.shape)
    k2 = sum((2.0 * math.pi * m) ** 2 for m in ms)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_hat = hat / k2
    g_hat[(0,) * v.ndim] = 0.0
    total = 0.0
    for m in _wavenumbers_odd(v.shape):
        comp = np.fft.ifftn(2.0j * math.pi * m * g_hat).real
        total += float(np.sum(comp ** 2))
    return math.sqrt(total * cell_size ** v.ndim)


def cell_center_atoms(rho: GridDensity):
    """Cell-center empirical approximation of a 1d grid density."""
    if rho.values.ndim != 1:
        raise ValueError("cell-center atoms implemented for d = 1")
    h = rho.cell_size
    pos = rho.origin + h * np.arange(rho.values.size)
    w = rho.values * h / rho.mass
    return pos, w


def verify_field_estimate(rho1: GridDensity, rho2: GridDensity, params: Params,
                          descriptor: str = "", seed: int = 0) -> EstimateReport:
    """Measure the force-field estimate on one density pair.

    lhs is the L^p norm of the force difference; rhs is
    max(sup rho1, sup rho2)^(1/p') times the exact W_p distance between the
    cell-center empiricals.  The ratio is then an empirical value for the
    otherwise unquantified constant in front of the estimate.
    """
    if rho1.values.shape != rho2.values.shape or rho1.cell_size != rho2.cell_size:
        raise ValueError("densities must share one grid")
    if params.domain == TORUS:
        s1 = solve_poisson_torus(rho1, params.sigma)
        s2 = solve_poisson_torus(rho2, params.sigma)
        f1, f2 = s1.force, s2.force
    else:
        f1 = solve_force_free_space_1d(rho1, params.sigma)
        f2 = solve_force_free_space_1d(rho2, params.sigma)
    diff = FieldGrid(tuple(a - b for a, b in zip(f1.components, f2.components)),
                     rho1.cell_size, rho1.origin)
    lhs = lp_norm_field(diff, params.p)
    x1, w1 = cell_center_atoms(rho1)
    x2, w2 = cell_center_atoms(rho2)
    cost, _ = wasserstein_atoms_1d(x1, w1, x2, w2, params.p, domain=params.domain)
    wp = cost ** (1.0 / params.p)
    rhs = max(rho1.sup, rho2.sup) ** (1.0 / params.p_conj) * wp
    ratio = lhs / rhs if rhs > 0 else 0.0
    return EstimateReport(lhs, rhs, ratio, params.p, descriptor,
                          d=rho1.d, domain=params.domain,
                          cells=rho1.values.shape[0], seed=seed)


# --- off-grid force evaluation -------------------------------------------

def spectral_interpolate(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation of periodic grid samples at arbitrary points.

    points has shape (n, d) with coordinates in [0,1); supports d in {1, 2}.
    """
    v = np.asarray(values, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    hat = np.fft.fftn(v) / v.size
    if v.ndim == 1:
        m = np.fft.fftfreq(v.shape[0], d=1.0 / v.shape[0])
        phase = np.exp(2.0j * math.pi * np.outer(pts[:, 0], m))
        return (phase @ hat).real
    if v.ndim == 2:
        m0 = np.fft.fftfreq(v.shape[0], d=1.0 / v.shape[0])
        m1 = np.fft.fftfreq(v.shape[1], d=1.0 / v.shape[1])
        e0 = np.exp(2.0j * math.pi * np.outer(pts[:, 0], m0))
        e1 = np.exp(2.0j * math.pi * np.outer(pts[:, 1], m1))
        return np.einsum("pm,mn,pn->p", e0, hat, e1).real
    raise ValueError("spectral interpolation implemented for d in {1, 2}")


def eval_force(solution_force: FieldGrid, points: np.ndarray, domain: str) -> np.ndarray:
    """Force vectors at continuum points: spectral on the torus, linear off it."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if domain == TORUS:
        comps = [spectral_interpolate(c, pts) for c in solution_force.components]
        return np.stack(comps, axis=-1)
    if solution_force.d != 1:
        raise ValueError("whole-space interpolation is one-dimensional")
    grid = solution_force.origin + solution_force.cell_size * np.arange(
        solution_force.components[0].size)
    return np.interp(pts[:, 0], grid, solution_force.components[0])[:, None]


@dataclass(frozen=True)
class LogLipReport:
    """Empirical log-Lipschitz constants of a force field over sampled pairs."""

    c_overall: float
    c_near: float
    c_far: float
    n_pairs: int
    n_skipped: int
    domain: str


def loglip_modulus(force: FieldGrid, density: GridDensity, xs: np.ndarray,
                   ys: np.ndarray, params: Params) -> LogLipReport:
    """Sup of |grad U(x) - grad U(y)| over the log-Lipschitz modulus.

    Torus modulus: r log(4 sqrt(d) / r) * sup|rho - 1|.
    Whole space, r < 1/e: r log(1/r) * (mass + sup rho); otherwise the
    all-separations modulus r (1 + max(-log r, 0)) * (mass + sup rho).
    Coincident pairs are skipped and counted.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    fx = eval_force(force, xs, params.domain)
    fy = eval_force(force, ys, params.domain)
    dforce = np.sqrt(np.sum((fx - fy) ** 2, axis=-1))
    if params.domain == TORUS:
        delta = np.mod(xs - ys + 0.5, 1.0) - 0.5
        r = np.sqrt(np.sum(delta * delta, axis=-1))
        live = r > 0
        sup_fluct = float(np.max(np.abs(density.values - 1.0)))
        if sup_fluct == 0.0:
            return LogLipReport(0.0, 0.0, 0.0, int(live.sum()), int((~live).sum()), TORUS)
        mod = r[live] * np.log(4.0 * math.sqrt(params.d) / r[live]) * sup_fluct
        ratios = dforce[live] / mod if mod.size else np.zeros(0)
        c = float(ratios.max()) if ratios.size else 0.0
        return LogLipReport(c, c, 0.0, int(live.sum()), int((~live).sum()), TORUS)
    r = np.sqrt(np.sum((xs - ys) ** 2, axis=-1))
    live = r > 0
    norm_factor = density.mass + density.sup
    r_live, df_live = r[live], dforce[live]
    near = r_live < 1.0 / math.e
    mod_near = r_live[near] * np.log(1.0 / r_live[near]) * norm_factor
    mod_far = r_live[~near] * (1.0 + np.maximum(-np.log(r_live[~near]), 0.0)) * norm_factor
    c_near = float((df_live[near] / mod_near).max()) if near.any() else 0.0
    c_far = float((df_live[~near] / mod_far).max()) if (~near).any() else 0.0
    return LogLipReport(max(c_near, c_far), c_near, c_far,
                        int(live.sum()), int((~live).sum()), WHOLE_SPACE)
