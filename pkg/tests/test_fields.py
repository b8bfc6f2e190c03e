import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetkern.errors import EllipticityViolation, InvalidSpec
from hetkern.fields import (
    Grid,
    ProblemSpec,
    cell_average,
    eliminate_drift,
    ellipticity_check,
    face_harmonic,
    make_field,
    tabulate,
)

from conftest import constant, periodic, random_field

xs = st.floats(-50, 50, allow_nan=False)


def test_grid_is_symmetric_and_contains_zero():
    g = Grid.from_spacing(2.0, 0.25)
    assert g.n == 17
    assert g.h == pytest.approx(0.25)
    assert g.x[g.center] == 0.0
    np.testing.assert_allclose(g.x, -g.x[::-1])
    assert g.index(-2.0) == 0 and g.index(1.5) == 14


def test_grid_rejects_bad_spacing_and_off_node_lookups():
    with pytest.raises(InvalidSpec):
        Grid.from_spacing(1.0, 0.3)
    with pytest.raises(InvalidSpec):
        Grid(1.0, 4)
    with pytest.raises(InvalidSpec):
        Grid.from_spacing(1.0, 0.25).index(0.1)


def test_refined_grid_halves_spacing_and_keeps_nodes():
    g = Grid.from_spacing(3.0, 0.1)
    f = g.refined(2)
    assert f.h == pytest.approx(g.h / 4)
    np.testing.assert_allclose(f.x[::4], g.x)


@pytest.mark.parametrize(
    "spec",
    [
        {"kind": "nope", "mu": 2},
        {"kind": "constant", "params": {"value": 1}},
        {"kind": "constant", "mu": -1, "params": {"value": 1}},
        {"kind": "periodic-trig", "mu": 2, "params": {"mean": 1}},
        {"kind": "piecewise-random", "mu": 2, "params": {"values": [1]}},
        {"kind": "tabulated", "mu": 2, "params": {"x": [0, 0], "values": [1, 1]}},
    ],
)
def test_make_field_rejects_malformed_specs(spec):
    with pytest.raises(InvalidSpec):
        make_field(spec)


def test_ellipticity_violations_are_reported():
    with pytest.raises(EllipticityViolation):
        make_field({"kind": "constant", "mu": 2, "params": {"value": 3.0}})
    with pytest.raises(EllipticityViolation):
        make_field({"kind": "constant", "mu": 2, "params": {"value": 0.25}})
    with pytest.raises(EllipticityViolation):
        make_field({"kind": "constant", "mu": 1, "role": "potential", "params": {"value": -1.5}})
    # potentials may be negative or zero
    r = make_field({"kind": "constant", "mu": 1, "role": "potential", "params": {"value": -1.0}})
    assert r(0.0) == -1.0


@given(mean=st.floats(0.8, 1.5), amp=st.floats(0.0, 0.3), period=st.floats(0.3, 5.0))
def test_periodic_field_stays_within_declared_bounds(mean, amp, period):
    f = periodic(mean, amp, period, mu=2.0)
    g = Grid.from_spacing(5.0, 0.05)
    mu_eff = ellipticity_check(f, g, strict=True)
    assert mu_eff <= 2.0
    lo, hi = f.value_range()
    v = f(g.x)
    assert lo - 1e-12 <= v.min() and v.max() <= hi + 1e-12


@given(seed=st.integers(0, 2**31), x=xs)
def test_random_field_is_deterministic_and_cellwise_constant(seed, x):
    f = random_field(seed)
    g = random_field(seed)
    assert f(x) == g(x)
    cell = np.floor(x)
    inside = np.array([cell + 0.01, cell + 0.5, cell + 0.99])
    assert len(set(f(inside).tolist())) == 1
    assert f(x) in (0.5, 2.0)


def test_random_fields_differ_between_seeds():
    x = np.arange(200) + 0.5
    assert np.any(random_field(1)(x) != random_field(2)(x))
    v = random_field(3)(x)
    assert 0.3 < np.mean(v == 2.0) < 0.7


@given(x=xs, sigma=st.floats(0.25, 4.0), z=st.floats(-3, 3))
def test_reflection_and_rescaling_identities(x, sigma, z):
    f = periodic(1.0, 0.4, 1.3)
    assert f.reflected()(x) == pytest.approx(f(-x))
    assert f.rescaled(sigma, z)(x) == pytest.approx(f(sigma * (x + z)))
    assert f.scaled(0.5)(x) == pytest.approx(0.5 * f(x))
    assert f.shifted(0.1)(x) == pytest.approx(f(x) + 0.1)


@given(seed=st.integers(0, 10_000))
def test_face_harmonic_is_below_arithmetic_mean(seed):
    g = Grid.from_spacing(4.0, 0.1)
    a, nu = random_field(seed), random_field(seed + 1)
    kf = face_harmonic(a, g, nu)
    pts = g.sub_midpoints()
    arith = np.mean(a(pts) * nu(pts), axis=1)
    assert np.all(kf <= arith + 1e-12)
    assert np.all(kf >= 0.25 - 1e-12) and np.all(kf <= 4.0 + 1e-12)


def test_face_and_cell_averages_of_constants():
    g = Grid.from_spacing(1.0, 0.1)
    np.testing.assert_allclose(face_harmonic(constant(2.0), g, constant(0.5)), 1.0)
    np.testing.assert_allclose(cell_average(constant(1.5), g), 1.5)


def test_tabulated_field_is_nearest_node():
    g = Grid.from_spacing(1.0, 0.5)
    f = tabulate(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), g, mu=5.0)
    np.testing.assert_allclose(f(np.array([-1.0, -0.76, -0.74, 0.2, 0.3, 2.0])), [1, 1, 2, 3, 4, 5])


def test_problem_spec_requires_one_formulation():
    a = constant(1.0)
    g = Grid.from_spacing(1.0, 0.1)
    with pytest.raises(InvalidSpec):
        ProblemSpec(a, g)
    with pytest.raises(InvalidSpec):
        ProblemSpec(a, g, W=1.0)  # canonical needs nu
    with pytest.raises(InvalidSpec):
        ProblemSpec(a, g, gamma=1.0)  # original needs r
    with pytest.raises(InvalidSpec):
        ProblemSpec(a, g, nu=a, r=constant(0.0, 1.0, "potential"), W=1.0, gamma=1.0)


def test_negative_drift_is_normalised_by_reflection():
    a, nu = periodic(1.0, 0.5, 1.0), periodic(1.0, 0.3, 0.7)
    p = ProblemSpec(a, Grid.from_spacing(2.0, 0.1), nu=nu, W=-1.5)
    q, flipped = p.normalized()
    assert flipped and q.W == 1.5
    assert q.a(0.3) == pytest.approx(a(-0.3))
    same, flipped = q.normalized()
    assert same is q and not flipped


def test_drift_elimination_for_constant_coefficients():
    g = Grid.from_spacing(2.0, 0.01)
    d = eliminate_drift(2.0 * np.ones(g.n), 1.0 * np.ones(g.n), 0.3 * np.ones(g.n), g)
    np.testing.assert_allclose(d.r_tilde, 0.3 - 1.0 / 8.0, atol=1e-12)
    np.testing.assert_allclose(d.log_weight, g.x / 4.0, atol=1e-12)
    assert d.fd_derivative


def test_drift_elimination_uses_exact_derivative_when_given():
    g = Grid.from_spacing(3.0, 0.01)
    b = np.sin
    d = eliminate_drift(lambda x: np.ones_like(x), b, lambda x: np.zeros_like(x), g, b_prime=np.cos)
    np.testing.assert_allclose(d.r_tilde, -0.5 * np.cos(g.x) - np.sin(g.x) ** 2 / 4, atol=1e-12)
    assert not d.fd_derivative
    fd = eliminate_drift(lambda x: np.ones_like(x), b, lambda x: np.zeros_like(x), g)
    np.testing.assert_allclose(fd.r_tilde, d.r_tilde, atol=1e-4)
