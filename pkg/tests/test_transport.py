import math

import numpy as np
import pytest

from kinwass import transport
from kinwass.core import EmpiricalMeasure, Params, TORUS, WHOLE_SPACE, validate_coupling
from oracles import brute_force_wp_pow

P2 = Params(p=2.0, d=1, sigma=-1, domain=TORUS)


def _measure(rng, n, d=1):
    return EmpiricalMeasure.uniform(rng.random((n, d)), rng.standard_normal((n, d)))


def _dirac(x, v):
    return EmpiricalMeasure(np.atleast_2d(x), np.atleast_2d(v), np.array([1.0]))


def test_cost_matrix_single_entry():
    mu = _dirac([0.1], [0.0])
    nu = _dirac([0.3], [1.0])
    cm = transport.cost_matrix(mu, nu, transport.PHASE, P2)
    assert cm.entries[0, 0] == pytest.approx(0.2 ** 2 + 1.0, abs=1e-15)

    same = transport.cost_matrix(mu, mu, transport.PHASE, P2)
    assert same.entries[0, 0] == 0.0

    kin0 = transport.cost_matrix(mu, nu, transport.KINETIC, P2, lam=0.0)
    assert kin0.entries[0, 0] == pytest.approx(1.0, abs=1e-15)

    with pytest.raises(ValueError):
        transport.cost_matrix(mu, nu, transport.KINETIC, P2, lam=-0.5)
    with pytest.raises(ValueError):
        transport.cost_matrix(mu, nu, "weird", P2)


def test_solve_exact_identity_and_dirac():
    rng = np.random.default_rng(0)
    mu = _measure(rng, 5)
    cm = transport.cost_matrix(mu, mu, transport.PHASE, P2)
    plan = transport.solve_exact(cm, mu, mu)
    assert plan.objective == pytest.approx(0.0, abs=1e-12)

    a = _dirac([0.1], [0.0])
    b = _dirac([0.3], [1.0])
    cm = transport.cost_matrix(a, b, transport.PHASE, P2)
    plan = transport.solve_exact(cm, a, b)
    assert plan.objective == pytest.approx(1.04, abs=1e-12)


def test_solve_exact_matches_permutation_oracle():
    rng = np.random.default_rng(1)
    for trial in range(20):
        n = int(rng.integers(2, 7))
        mu, nu = _measure(rng, n), _measure(rng, n)
        cm = transport.cost_matrix(mu, nu, transport.PHASE, P2)
        plan = transport.solve_exact(cm, mu, nu)
        oracle = brute_force_wp_pow(mu, nu, 2.0)
        assert abs(plan.objective - oracle) <= 1e-9
        assert plan.dual_residual is not None and plan.dual_residual <= 1e-9
        r, c = validate_coupling(plan.coupling, mu, nu)
        assert max(r, c) <= 1e-10


def test_solve_exact_weighted_against_transposed_route():
    # nonuniform weights: check symmetry of the optimum as an independent route
    rng = np.random.default_rng(2)
    n, m = 6, 9
    w1 = rng.random(n); w1 /= w1.sum()
    w2 = rng.random(m); w2 /= w2.sum()
    mu = EmpiricalMeasure(rng.random((n, 1)), rng.standard_normal((n, 1)), w1)
    nu = EmpiricalMeasure(rng.random((m, 1)), rng.standard_normal((m, 1)), w2)
    cm = transport.cost_matrix(mu, nu, transport.PHASE, P2)
    cm_t = transport.cost_matrix(nu, mu, transport.PHASE, P2)
    a = transport.solve_exact(cm, mu, nu).objective
    b = transport.solve_exact(cm_t, nu, mu).objective
    assert a == pytest.approx(b, abs=1e-12)


def test_solve_exact_size_cap():
    rng = np.random.default_rng(3)
    mu, nu = _measure(rng, 4), _measure(rng, 4)
    cm = transport.cost_matrix(mu, nu, transport.PHASE, P2)
    with pytest.raises(transport.SizeCapError):
        transport.solve_exact(cm, mu, nu, size_cap=8)


def test_kinetic_cost_objective_monotone_in_lambda():
    rng = np.random.default_rng(4)
    w1 = rng.random(7); w1 /= w1.sum()
    w2 = rng.random(5); w2 /= w2.sum()
    mu = EmpiricalMeasure(rng.random((7, 1)), rng.standard_normal((7, 1)), w1)
    nu = EmpiricalMeasure(rng.random((5, 1)), rng.standard_normal((5, 1)), w2)
    prev = -1.0
    for lam in (0.0, 0.3, 1.0, 3.0, 10.0):
        cm = transport.cost_matrix(mu, nu, transport.KINETIC, P2, lam=lam)
        obj = transport.solve_exact(cm, mu, nu).objective
        assert obj >= prev - 1e-12
        prev = obj


def test_sinkhorn_dirac_and_identity():
    a = _dirac([0.1], [0.0])
    b = _dirac([0.3], [1.0])
    cm = transport.cost_matrix(a, b, transport.PHASE, P2)
    for eps in (1e-1, 1e-3):
        plan = transport.solve_sinkhorn(cm, a, b, eps)
        assert plan.objective == pytest.approx(1.04, abs=1e-12)

    rng = np.random.default_rng(5)
    mu = _measure(rng, 20)
    cm = transport.cost_matrix(mu, mu, transport.PHASE, P2)
    plan = transport.solve_sinkhorn(cm, mu, mu, eps=1e-3)
    assert plan.objective <= 1e-2


def test_sinkhorn_objective_decreases_toward_exact():
    rng = np.random.default_rng(6)
    n = 50
    pos = rng.random((n, 1))
    mu = EmpiricalMeasure.uniform(pos, rng.standard_normal((n, 1)))
    nu = EmpiricalMeasure.uniform(np.mod(pos + 0.21, 1.0), rng.standard_normal((n, 1)))
    cm = transport.cost_matrix(mu, nu, transport.PHASE, P2)
    exact = transport.solve_exact(cm, mu, nu).objective
    objs = []
    for eps in (1e-1, 1e-2, 1e-3):
        plan = transport.solve_sinkhorn(cm, mu, nu, eps, tol=1e-10)
        objs.append(plan.objective)
        assert plan.objective >= exact - 1e-12  # entropic plan is LP-feasible
        assert plan.iterations is not None
    assert objs[0] >= objs[1] >= objs[2]
    assert objs[2] - exact <= 1e-2


def test_sinkhorn_failure_is_explicit():
    rng = np.random.default_rng(7)
    mu, nu = _measure(rng, 12), _measure(rng, 12)
    cm = transport.cost_matrix(mu, nu, transport.PHASE, P2)
    with pytest.raises(transport.SinkhornError):
        transport.solve_sinkhorn(cm, mu, nu, eps=1e-4, tol=1e-12, max_iter=3)


def test_wp_distance_examples():
    rng = np.random.default_rng(8)
    mu = _measure(rng, 6)
    assert transport.wp_distance(mu, mu, P2) == pytest.approx(0.0, abs=1e-9)

    a = _dirac([0.1], [0.0])
    b = _dirac([0.3], [1.0])
    assert transport.wp_distance(a, b, P2) == pytest.approx(math.sqrt(1.04), abs=1e-12)

    mu, nu = _measure(rng, 4), _measure(rng, 4)
    oracle = brute_force_wp_pow(mu, nu, 2.0) ** 0.5
    assert transport.wp_distance(mu, nu, P2) == pytest.approx(oracle, abs=1e-10)


def test_wp_distance_metric_axioms():
    rng = np.random.default_rng(9)
    params = Params(p=2.5, d=1, sigma=-1, domain=TORUS)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        mu, nu, ka = (_measure(rng, n) for _ in range(3))
        dab = transport.wp_distance(mu, nu, params)
        dba = transport.wp_distance(nu, mu, params)
        assert abs(dab - dba) <= 1e-10
        dac = transport.wp_distance(mu, ka, params)
        dcb = transport.wp_distance(ka, nu, params)
        assert dab <= dac + dcb + 1e-9


def test_wp_distance_whole_space():
    params = Params(p=3.0, d=2, sigma=1, domain=WHOLE_SPACE)
    a = _dirac([0.0, 0.0], [0.0, 0.0])
    b = _dirac([3.0, 4.0], [0.0, 0.0])
    assert transport.wp_distance(a, b, params) == pytest.approx(5.0, abs=1e-12)


def test_plan_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    mu, nu = _measure(rng, 5), _measure(rng, 5)
    cm = transport.cost_matrix(mu, nu, transport.PHASE, P2)
    plan = transport.solve_exact(cm, mu, nu)
    path = tmp_path / "plan.csv"
    transport.save_plan(path, plan)
    back = transport.load_plan(path)
    assert back.objective == plan.objective
    np.testing.assert_array_equal(back.coupling.i, plan.coupling.i)
    np.testing.assert_array_equal(back.coupling.mass, plan.coupling.mass)


def test_enumeration_oracle_guard():
    rng = np.random.default_rng(11)
    mu, nu = _measure(rng, 9), _measure(rng, 9)
    cm = transport.cost_matrix(mu, nu, transport.PHASE, P2)
    with pytest.raises(ValueError):
        transport.enumerate_assignment_minimum(cm)
