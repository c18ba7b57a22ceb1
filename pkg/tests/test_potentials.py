import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpe_optctl import PotentialFamily, SpatialGrid, d2_dlambda2, d_dlambda, evaluate
from gpe_optctl.potentials import available_families, register_family

X = np.linspace(-4, 4, 161)


def test_families_registered():
    assert {"splitting_poly", "shaking_shifted"} <= set(available_families())
    assert PotentialFamily("splitting_poly").lambda_unit == "1"
    assert PotentialFamily("shaking_shifted").lambda_unit == "um"


def test_unknown_family_and_coefficient():
    with pytest.raises(ValueError):
        PotentialFamily("nope")
    with pytest.raises((ValueError, KeyError)):
        PotentialFamily("splitting_poly", {"gamma": 1.0})


def test_splitting_single_to_double_well():
    pot = PotentialFamily("splitting_poly")
    v0 = pot.value(X, 0.0)
    assert X[np.argmin(v0)] == pytest.approx(0.0)
    v1 = pot.value(X, 1.0)
    minima = X[np.argsort(v1)[:2]]
    a, b = pot.coefficients["alpha"], pot.coefficients["beta"]
    assert sorted(minima) == pytest.approx([-np.sqrt(a / (2 * b)), np.sqrt(a / (2 * b))])


def test_splitting_derivatives_formula():
    pot = PotentialFamily("splitting_poly")
    assert np.allclose(pot.first(X, 0.3), -2 * pot.coefficients["alpha"] * X**2)
    assert np.all(pot.second(X, 0.3) == 0)


def test_shaking_minimum_follows_lambda():
    pot = PotentialFamily("shaking_shifted")
    x = np.linspace(-2, 2, 401)
    assert x[np.argmin(pot.value(x, 0.5))] == pytest.approx(0.5)


def test_shaking_harmonic_derivative_example():
    pot = PotentialFamily("shaking_shifted", {"mass": 1.0, "omega": 1.0, "c4": 0.0, "c6": 0.0})
    assert pot.first(np.array([1.0]), 0.0)[0] == pytest.approx(-1.0)


def test_shift_identity_on_grid_shift():
    grid = SpatialGrid(-8, 8, 256)
    pot = PotentialFamily("shaking_shifted", {"c6": 0.5})
    shift = 7
    lam = shift * grid.dx
    v0 = evaluate(pot, grid, 0.0)
    v_lam = evaluate(pot, grid, lam)
    assert np.allclose(v_lam[shift:], v0[:-shift], rtol=1e-12, atol=1e-9)


@given(st.floats(-1.0, 1.0))
def test_shift_identity_polynomial(lam):
    pot = PotentialFamily("shaking_shifted", {"c6": 0.3})
    c = pot.coefficients
    v0 = np.polynomial.Polynomial([0, 0, 0.5 * c["mass"] * c["omega"] ** 2, 0, c["c4"], 0, c["c6"]])
    shifted = v0(np.polynomial.Polynomial([-lam, 1.0]))
    assert np.allclose(pot.value(X, lam), shifted(X), rtol=1e-8, atol=1e-8)


@given(st.sampled_from(["splitting_poly", "shaking_shifted"]), st.floats(-0.5, 1.5))
def test_derivatives_match_finite_differences(kind, lam):
    pot = PotentialFamily(kind, {"c6": 0.2} if kind == "shaking_shifted" else {})
    h = 1e-5
    fd1 = (pot.value(X, lam + h) - pot.value(X, lam - h)) / (2 * h)
    fd2 = (pot.first(X, lam + h) - pot.first(X, lam - h)) / (2 * h)
    scale = 1 + np.abs(pot.value(X, lam))
    assert np.all(np.abs(fd1 - pot.first(X, lam)) < 1e-5 * scale)
    assert np.all(np.abs(fd2 - pot.second(X, lam)) < 1e-5 * scale)


def test_grid_helpers():
    grid = SpatialGrid(-4, 4, 64)
    pot = PotentialFamily("splitting_poly")
    assert np.array_equal(evaluate(pot, grid, 0.2), pot.value(grid.x, 0.2))
    assert np.array_equal(d_dlambda(pot, grid, 0.2), pot.first(grid.x, 0.2))
    assert np.array_equal(d2_dlambda2(pot, grid, 0.2), pot.second(grid.x, 0.2))


def test_bounds_enforced():
    pot = PotentialFamily("splitting_poly", bounds=(0.0, 1.0))
    pot.value(X, 0.5)
    with pytest.raises(ValueError):
        pot.value(X, 1.5)


def test_custom_family():
    register_family("linear_tilt", lambda x, lam, c: c["g"] * lam * x,
                    lambda x, lam, c: c["g"] * x, lambda x, lam, c: 0 * x, {"g": 2.0})
    pot = PotentialFamily("linear_tilt")
    assert np.allclose(pot.first(X, 0.1), 2 * X)
    assert pot.to_dict()["kind"] == "linear_tilt"
