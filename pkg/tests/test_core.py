import math

import numpy as np
import pytest

from kinwass.core import (Coupling, EmpiricalMeasure, GridDensity, Params,
                          load_measure, periodic_distance, save_measure,
                          validate_coupling)


def test_params_conjugate_exponent():
    for p in (1.5, 2.0, 3.0, 7.3):
        params = Params(p=p)
        assert abs(1.0 / params.p + 1.0 / params.p_conj - 1.0) <= 1e-14


def test_params_rejects_bad_values():
    with pytest.raises(ValueError):
        Params(p=1.0)
    with pytest.raises(ValueError):
        Params(p=2.0, sigma=2)
    with pytest.raises(ValueError):
        Params(p=2.0, d=0)
    with pytest.raises(ValueError):
        Params(p=2.0, domain="annulus")


def test_periodic_distance_wraparound():
    assert periodic_distance(np.array([0.1]), np.array([0.9])) == pytest.approx(0.2)
    assert periodic_distance(np.array([0.3, 0.7]), np.array([0.3, 0.7])) == 0.0
    got = periodic_distance(np.array([0.0, 0.0]), np.array([0.5, 0.5]))
    assert got == pytest.approx(math.sqrt(0.5), abs=1e-12)


def test_periodic_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        periodic_distance(np.array([0.1, 0.2]), np.array([0.1]))
    with pytest.raises(ValueError):
        periodic_distance(np.array([0.1]), np.array([0.2]), d=3)


def test_periodic_distance_is_a_metric_on_samples():
    rng = np.random.default_rng(0)
    a, b, c = (rng.random((10_000, 3)) for _ in range(3))
    dab = periodic_distance(a, b)
    dba = periodic_distance(b, a)
    assert np.array_equal(dab, dba)
    dac = periodic_distance(a, c)
    dcb = periodic_distance(c, b)
    assert np.all(dab <= dac + dcb + 1e-12)
    assert np.all(dab <= math.sqrt(3) + 1e-15)


def test_measure_constructor_validation():
    pos = np.array([[0.1], [0.4]])
    vel = np.zeros((2, 1))
    with pytest.raises(ValueError):
        EmpiricalMeasure(pos, vel, np.array([0.7, 0.4]))   # not normalized
    with pytest.raises(ValueError):
        EmpiricalMeasure(pos, vel, np.array([-0.1, 1.1]))  # negative weight
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0))
    single = EmpiricalMeasure(np.array([[0.5]]), np.array([[0.0]]), np.array([1.0]))
    assert len(single) == 1
    with pytest.raises(ValueError):
        EmpiricalMeasure(pos, np.zeros((3, 1)), np.array([0.5, 0.5]))


def test_measure_is_immutable():
    m = EmpiricalMeasure.uniform(np.array([[0.1], [0.2]]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        m.positions[0, 0] = 0.3


def test_validate_coupling_diagonal_and_product():
    rng = np.random.default_rng(1)
    n = 5
    mu = EmpiricalMeasure.uniform(rng.random((n, 1)), rng.standard_normal((n, 1)))
    diag = Coupling(np.arange(n), np.arange(n), np.full(n, 1.0 / n))
    assert validate_coupling(diag, mu, mu) == (0.0, 0.0)

    w = rng.random(4)
    w /= w.sum()
    nu = EmpiricalMeasure(rng.random((4, 1)), rng.standard_normal((4, 1)), w)
    ii, jj = np.meshgrid(np.arange(n), np.arange(4), indexing="ij")
    mass = np.outer(mu.weights, nu.weights).ravel()
    product = Coupling(ii.ravel(), jj.ravel(), mass)
    r, c = validate_coupling(product, mu, nu)
    assert r <= 1e-15 and c <= 1e-15


def test_validate_coupling_reports_constructed_defect():
    n = 4
    mu = EmpiricalMeasure.uniform(np.linspace(0, 0.9, n)[:, None], np.zeros((n, 1)))
    mass = np.full(n, 1.0 / n)
    mass[0] += 1e-6
    mass[1] -= 1e-6  # keep total mass 1 so only the marginals are off
    pi = Coupling(np.arange(n), np.arange(n), mass)
    r, c = validate_coupling(pi, mu, mu)
    assert r == pytest.approx(1e-6, rel=1e-6)
    assert c == pytest.approx(1e-6, rel=1e-6)


def test_validate_coupling_index_bounds():
    mu = EmpiricalMeasure.uniform(np.array([[0.1], [0.2]]), np.zeros((2, 1)))
    pi = Coupling(np.array([0, 5]), np.array([0, 1]), np.array([0.5, 0.5]))
    with pytest.raises(IndexError):
        validate_coupling(pi, mu, mu)


def test_grid_density_validation():
    vals = np.full(8, 1.0)
    g = GridDensity(vals, 1.0 / 8)
    assert g.mass == 1.0 and g.sup == 1.0 and g.d == 1
    with pytest.raises(ValueError):
        GridDensity(-vals, 1.0 / 8)
    with pytest.raises(ValueError):
        GridDensity(vals, 1.0 / 8, mass=2.0)  # quadrature mass is 1


def test_measure_file_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    m = EmpiricalMeasure.uniform(rng.random((6, 2)), rng.standard_normal((6, 2)))
    path = tmp_path / "m.csv"
    save_measure(path, m)
    back = load_measure(path)
    assert back.d == 2
    np.testing.assert_array_equal(back.positions, m.positions)
    np.testing.assert_array_equal(back.velocities, m.velocities)
    np.testing.assert_array_equal(back.weights, m.weights)


def test_measure_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        load_measure(path)
