"""Shared primitives: parameters, periodic geometry, measures, couplings, grids.

Positions on the torus live in the fundamental domain [0,1)^d with the
per-coordinate wrap metric; whole-space positions are plain reals.  All
containers are immutable after construction (arrays are made read-only), so
they can be shared freely across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

TORUS = "torus"
WHOLE_SPACE = "whole_space"

WEIGHT_TOL = 1e-12
MARGINAL_TOL = 1e-10
MASS_TOL = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Params:
    """Global knobs shared by every estimate: exponent p, dimension, sign, domain.

    The conjugate exponent is derived, never stored, so 1/p + 1/p_conj == 1
    holds to rounding by construction.  sigma = +1 gives the focusing
    (attractive) interaction under the convention sigma * Lap(U) = rho - 1
    with force -grad U; sigma = -1 gives the defocusing branch.
    """

    p: float
    d: int = 1
    sigma: int = -1
    domain: str = TORUS

    def __post_init__(self):
        if not (1.0 < self.p < math.inf):
            raise ValueError(f"exponent p must lie in (1, inf), got {self.p}")
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.sigma not in (-1, 1):
            raise ValueError(f"sigma must be +1 or -1, got {self.sigma}")
        if self.domain not in (TORUS, WHOLE_SPACE):
            raise ValueError(f"unknown domain {self.domain!r}")

    @property
    def p_conj(self) -> float:
        return self.p / (self.p - 1.0)


def wrap_torus(x: np.ndarray) -> np.ndarray:
    """Map coordinates into the fundamental domain [0,1)."""
    return np.mod(x, 1.0)


def periodic_displacement(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Signed minimal displacement a - b on the unit torus, per coordinate in [-1/2, 1/2)."""
    return np.mod(np.asarray(a) - np.asarray(b) + 0.5, 1.0) - 0.5


def periodic_distance(a: np.ndarray, b: np.ndarray, d: Optional[int] = None) -> np.ndarray:
    """Euclidean length of the per-coordinate minimal displacement on [0,1)^d.

    Accepts single points of shape (d,) or batches (..., d); returns scalars
    or (...,) arrays.  Result never exceeds sqrt(d)/2 per-coordinate
    composition, hence sqrt(d) overall.
    """
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if d is not None and a.shape[-1] != d:
        raise ValueError(f"expected dimension {d}, got {a.shape[-1]}")
    # |a - b| first keeps the result bit-exactly symmetric in (a, b)
    gap = np.abs(a - b)
    delta = np.minimum(gap, 1.0 - gap)
    out = np.sqrt(np.sum(delta * delta, axis=-1))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted phase-space samples: positions in X, velocities in R^d.

    Weights must be nonnegative and sum to one within 1e-12; empty measures
    are rejected, a single Dirac is allowed.
    """

    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        vel = np.atleast_2d(np.asarray(self.velocities, dtype=np.float64))
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if pos.shape[0] == 0:
            raise ValueError("empty measure rejected")
        if pos.shape != vel.shape or pos.shape[0] != w.shape[0]:
            raise ValueError(
                f"inconsistent sample arrays: positions {pos.shape}, "
                f"velocities {vel.shape}, weights {w.shape}"
            )
        if np.any(w < 0):
            raise ValueError("negative weights rejected")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 within {WEIGHT_TOL}, got {w.sum()!r}")
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "velocities", _readonly(vel))
        object.__setattr__(self, "weights", _readonly(w))

    @classmethod
    def uniform(cls, positions: np.ndarray, velocities: np.ndarray) -> "EmpiricalMeasure":
        pos = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        n = pos.shape[0]
        return cls(pos, velocities, np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class Coupling:
    """Sparse transport plan: mass on index pairs (i into mu, j into nu)."""

    i: np.ndarray
    j: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        i = np.atleast_1d(np.asarray(self.i, dtype=np.int64))
        j = np.atleast_1d(np.asarray(self.j, dtype=np.int64))
        m = np.atleast_1d(np.asarray(self.mass, dtype=np.float64))
        if not (i.shape == j.shape == m.shape):
            raise ValueError("i, j, mass must have identical shapes")
        if np.any(m < 0):
            raise ValueError("negative mass rejected")
        if abs(m.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"total mass must be 1 within {WEIGHT_TOL}, got {m.sum()!r}")
        i.flags.writeable = False
        j.flags.writeable = False
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "mass", _readonly(m))

    def __len__(self) -> int:
        return self.mass.shape[0]


def validate_coupling(pi: Coupling, mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    """Return (max row-sum deviation, max column-sum deviation) of pi against mu, nu.

    Callers assert the residuals against MARGINAL_TOL; out-of-range indices
    raise immediately.
    """
    n, m = len(mu), len(nu)
    if len(pi) and (pi.i.min() < 0 or pi.i.max() >= n or pi.j.min() < 0 or pi.j.max() >= m):
        raise IndexError("coupling index out of range")
    row = np.bincount(pi.i, weights=pi.mass, minlength=n)
    col = np.bincount(pi.j, weights=pi.mass, minlength=m)
    return float(np.max(np.abs(row - mu.weights))), float(np.max(np.abs(col - nu.weights)))


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative density samples on a regular grid.

    Torus: values at nodes g * cell_size on [0,1)^d, cell_size = 1/M.
    Whole space: values at origin + g * cell_size (compact support assumed).
    The quadrature mass sum(values) * cell_size^d must match the declared mass.
    """

    values: np.ndarray
    cell_size: float
    origin: float = 0.0
    mass: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if np.any(v < 0):
            raise ValueError("negative density values rejected")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite density values rejected")
        got = v.sum() * self.cell_size ** v.ndim
        if abs(got - self.mass) > MASS_TOL:
            raise ValueError(f"mass mismatch: declared {self.mass}, quadrature {got!r}")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def sup(self) -> float:
        return float(self.values.max())

    @property
    def cells(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FieldGrid:
    """d vector components sampled on the same grid as the density they came from."""

    components: tuple
    cell_size: float
    origin: float = 0.0

    def __post_init__(self):
        comps = tuple(_readonly(np.asarray(c, dtype=np.float64)) for c in self.components)
        if len(comps) == 0:
            raise ValueError("field needs at least one component")
        shape = comps[0].shape
        if any(c.shape != shape for c in comps):
            raise ValueError("field components must share one shape")
        if len(comps) != comps[0].ndim:
            raise ValueError(
                f"expected {comps[0].ndim} components for a {comps[0].ndim}-d grid, got {len(comps)}"
            )
        object.__setattr__(self, "components", comps)

    @property
    def d(self) -> int:
        return len(self.components)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.components))


# --- measure snapshot files: header x1..xd,v1..vd,w, one sample per row ---

FLOAT_FMT = "%.17g"


def measure_header(d: int) -> str:
    xs = [f"x{k + 1}" for k in range(d)]
    vs = [f"v{k + 1}" for k in range(d)]
    return ",".join(xs + vs + ["w"])


def save_measure(path, measure: EmpiricalMeasure):
    data = np.column_stack([measure.positions, measure.velocities, measure.weights])
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",",
               header=measure_header(measure.d), comments="")


def load_measure(path) -> EmpiricalMeasure:
    with open(path) as fh:
        header = fh.readline().strip()
    cols = header.split(",")
    if len(cols) < 3 or cols[-1] != "w" or (len(cols) - 1) % 2 != 0:
        raise ValueError(f"not a measure snapshot file: header {header!r}")
    d = (len(cols) - 1) // 2
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2 * d + 1:
        raise ValueError(f"row width {data.shape[1]} does not match header {header!r}")
    return EmpiricalMeasure(data[:, :d], data[:, d:2 * d], data[:, 2 * d])
