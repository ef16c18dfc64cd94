"""Independent reference implementations used only to check the package.

These deliberately avoid the package's solver code paths: brute force over
permutations and transport matrices, naive fixed-point iteration for the
implicit root, and direct quadrature.
"""

import itertools
import math

import numpy as np


def torus_dist(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b))
    d = np.minimum(d, 1.0 - d)
    return math.sqrt(float(np.sum(d * d)))


def phase_cost(mu_pos, mu_vel, nu_pos, nu_vel, i, j, p, periodic=True):
    if periodic:
        dx = torus_dist(mu_pos[i], nu_pos[j])
    else:
        dx = float(np.linalg.norm(np.asarray(mu_pos[i]) - np.asarray(nu_pos[j])))
    dv = float(np.linalg.norm(np.asarray(mu_vel[i]) - np.asarray(nu_vel[j])))
    return dx ** p + dv ** p


def brute_force_wp_pow(mu, nu, p, periodic=True, lam_x=1.0):
    """Minimum transport cost over all permutations (uniform weights, equal n)."""
    n = len(mu.weights)
    assert n == len(nu.weights) <= 8
    best = math.inf
    for perm in itertools.permutations(range(n)):
        total = 0.0
        for i in range(n):
            j = perm[i]
            if periodic:
                dx = torus_dist(mu.positions[i], nu.positions[j])
            else:
                dx = float(np.linalg.norm(mu.positions[i] - nu.positions[j]))
            dv = float(np.linalg.norm(mu.velocities[i] - nu.velocities[j]))
            total += (lam_x * dx ** p + dv ** p) / n
        best = min(best, total)
    return best


def brute_force_kinetic_root(mu, nu, p, periodic=True):
    """Enumerate assignments, solve each root by damped fixed point, take the min."""
    n = len(mu.weights)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        cx = cv = 0.0
        for i in range(n):
            j = perm[i]
            if periodic:
                dx = torus_dist(mu.positions[i], nu.positions[j])
            else:
                dx = float(np.linalg.norm(mu.positions[i] - nu.positions[j]))
            dv = float(np.linalg.norm(mu.velocities[i] - nu.velocities[j]))
            cx += dx ** p / n
            cv += dv ** p / n
        best = min(best, fixed_point_root(cx, cv, p))
    return best


def fixed_point_root(cx, cv, p, n_iter=400):
    """Solve s = |log s|^(p/2) cx + cv by bisection on the increasing residual."""
    if cx == 0.0 and cv == 0.0:
        return 0.0
    if cv >= 1.0 or cx == 0.0:
        return cv

    def g(s):
        return s - (-math.log(s)) ** (0.5 * p) * cx - cv

    lo, hi = 1e-280, 1.0 - 1e-16
    for _ in range(n_iter):
        mid = math.sqrt(lo * hi)
        if g(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)
