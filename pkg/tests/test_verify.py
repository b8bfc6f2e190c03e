import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from hetkern import eigen, kernel, verify
from hetkern.corrector import corrector
from hetkern.errors import EmptyTrustRegion, EmptyTube
from hetkern.fields import Grid, ProblemSpec

from conftest import constant, gaussian, periodic, random_field

HALF_LN_4PI = 0.5 * np.log(4 * np.pi)


def exact_table(W=1.0, L=20.0, h=0.01, times=(0.1, 0.25, 0.5, 1.0)):
    """Analytic constant-coefficient kernel packaged as a fully trusted table."""
    g = Grid.from_spacing(L, h)
    times = np.asarray(times, float)
    vals = np.array([gaussian(t, g.x, 0.0, W) for t in times])
    one = constant(1.0)
    return kernel.KernelTable(
        y=0.0,
        times=times,
        values=vals,
        mass=np.ones(len(times)),
        boundary_flux=np.zeros(len(times)),
        steps=np.full(len(times), 100),
        grid=g,
        weight=np.ones(g.n),
        mu=1.0,
        problem=ProblemSpec(one, g, nu=one, W=W),
    )


def upper_oracle(zeta_max):
    # smallest C with ln C - zeta/C >= -ln(4 pi)/2 - zeta/4 on [0, zeta_max]; worst case at zeta_max for C < 4
    f = lambda C: np.log(C) + HALF_LN_4PI - zeta_max * (1 / C - 0.25)
    return brentq(f, 1e-3, 4.0) if f(4.0 - 1e-12) > 0 else 4.0


@given(lnP=st.floats(-30, 2), t=st.floats(0.05, 5.0), z=st.floats(-10, 10))
def test_pointwise_constants_are_minimal(lnP, t, z):
    u = z * z / t
    base = lnP + 0.5 * np.log(t)
    (cu,) = verify.upper_constants(np.array([lnP]), np.array([t]), np.array([z]))
    (cl,) = verify.lower_constants(np.array([lnP]), np.array([t]), np.array([z]))
    up = lambda C: np.log(C) - u / C >= base
    low = lambda C: -np.log(C) - C * u <= base
    assert up(cu)
    # inf means no constant up to the 1e12 search cap
    assert low(cl) if np.isfinite(cl) else not low(1e12)
    if cu > 1e-6:
        assert not up(cu * (1 - 2e-4))
    if cl > 1e-6:
        assert not low(cl * (1 - 2e-4))


def test_exact_gaussian_constants_match_closed_forms():
    tab = exact_table()
    T = corrector(constant(1.0), constant(1.0), 1.0, tab.grid)
    fit = verify.fit_gaussian_constants(tab, T, {"z_over_sqrt_t": 6.0})
    zmax = max(fit.scatter["u"])
    assert fit.C_up == pytest.approx(upper_oracle(zmax), rel=1e-3)
    assert fit.C_up == pytest.approx(upper_oracle(36.0), rel=1e-2)
    assert fit.C_low == pytest.approx(np.sqrt(4 * np.pi), rel=1e-3)
    # the data collapse recovers the exponent 1/4 exactly
    assert fit.collapse_constant == pytest.approx(4.0, rel=1e-6)
    assert fit.n_points > 1000
    assert set(fit.per_time) == {0.1, 0.25, 0.5, 1.0}


def test_upper_constant_grows_to_four_with_the_window():
    tab = exact_table()
    T = corrector(constant(1.0), constant(1.0), 1.0, tab.grid)
    ups = [verify.fit_gaussian_constants(tab, T, {"z_over_sqrt_t": k}).C_up for k in (2.0, 6.0, 12.0)]
    assert ups[0] < ups[1] < ups[2] <= 4.0 + 1e-3


def test_fit_region_filters_and_empty_region_raises():
    tab = exact_table()
    T = corrector(constant(1.0), constant(1.0), 1.0, tab.grid)
    fit = verify.fit_gaussian_constants(tab, T, {"t_min": 0.5})
    assert set(fit.per_time) == {0.5, 1.0}
    with pytest.raises(EmptyTrustRegion):
        verify.fit_gaussian_constants(tab, T, {"t_min": 5.0})


def test_wrong_drift_degrades_the_fit():
    tab = exact_table(W=4.0, L=40.0, h=0.02, times=np.arange(0.25, 5.01, 0.25))
    T = corrector(constant(1.0), constant(1.0), 4.0, tab.grid)
    good = verify.fit_gaussian_constants(tab, T, {"z_over_sqrt_t": 6.0})
    bad = verify.fit_gaussian_constants(tab, T, {"z_over_sqrt_t": 6.0}, W=4.4)
    assert bad.C > 1.2 * good.C


def test_refinement_deltas_are_relative_changes():
    tab = exact_table()
    T = corrector(constant(1.0), constant(1.0), 1.0, tab.grid)
    f = verify.fit_gaussian_constants(tab, T)
    d = verify.refinement_deltas(f, f)
    assert d == {"C_up": 0.0, "C_low": 0.0}


def test_ground_state_quotient_of_the_explicit_case():
    # a = 1, r = 0, gamma = 1: U is the heat kernel and the quotient is the kernel with drift W_gamma = 2
    g = Grid.from_spacing(20.0, 0.02)
    a, r = constant(1.0), constant(0.0, 1.0, "potential")
    big = eigen.spectral_summary(a, r, 1.0, Grid.from_spacing(60.0, 0.02), gamma_lower=0.0)
    s = eigen.restrict_summary(big, g)
    times = [0.1, 0.25, 0.5, 1.0]
    U = kernel.heat_kernel_original(a, r, 1.0, 0.0, times, g, summary=s).route_b
    Q = verify.ground_state_quotient(U, s)
    for k, t in enumerate(times):
        near = np.abs(g.x - 2 * t) <= 4 * np.sqrt(t)
        exact = gaussian(t, g.x[near], 0.0, 2.0)
        assert np.max(np.abs(Q.values[k, near] - exact) / exact) < 1e-2
    fit = verify.verify_original_bounds(U, s, region={"z_over_sqrt_t": 6.0})
    assert np.isfinite(fit.C_up) and np.isfinite(fit.C_low)


def test_nash_exponent_of_a_smooth_kernel():
    tab = exact_table()
    res = verify.nash_exponent(tab)
    assert 0 < res.beta_hat < 1 and np.isfinite(res.C_hat)
    assert res.check().passed
    assert res.n_pairs > 0


def test_nash_exponent_is_stable_under_refinement_for_random_fields():
    betas = []
    for h in (0.04, 0.02):
        g = Grid.from_spacing(15.0, h)
        p = ProblemSpec(random_field(11), g, nu=random_field(12), W=1.0)
        betas.append(verify.nash_exponent(kernel.heat_kernel(p, 0.0, np.arange(0.1, 1.01, 0.05))).beta_hat)
    assert abs(betas[0] - betas[1]) <= 0.05


def test_oscillation_contracts_in_smaller_tubes():
    g = Grid.from_spacing(20.0, 0.02)
    p = ProblemSpec(periodic(), g, nu=periodic(1.0, 0.4, 1.7), W=1.0)
    T = corrector(p.a, p.nu, p.W, g)
    tab = kernel.heat_kernel(p, 0.0, np.round(np.arange(0.1, 3.01, 0.05), 10))
    for s in (0.5, 1.0, 2.0):
        r = verify.oscillation_contraction(tab, T, 0.0, 1.0, s)
        assert r.passed and 0 < r.measured < 1
    with pytest.raises(ValueError):
        verify.oscillation_contraction(tab, T, 0.0, 1.0, 0.5, delta=1.5)
    with pytest.raises(EmptyTube):
        verify.tube_oscillation(tab, T, 0.0, 1.0, 10.0)


def test_l1_to_sup_decay_constant_is_finite():
    g = Grid.from_spacing(15.0, 0.05)
    p = ProblemSpec(random_field(3), g, nu=random_field(4), W=1.0)
    p0 = np.zeros(g.n)
    p0[g.index(0.0)] = 1 / g.h
    r = verify.l1_linf_constant(p0, np.zeros(g.n), p, [0.25, 0.5, 1.0])
    assert r.passed and 0 < r.measured < 10
    with pytest.raises(ValueError):
        verify.l1_linf_constant(p0, p0, p, [0.5])


def test_near_diagonal_lower_bound():
    tab = exact_table()
    T = corrector(constant(1.0), constant(1.0), 1.0, tab.grid)
    r = verify.near_diagonal_check(tab, T, 1.0)
    # inf of sqrt(t) P over |z| <= sqrt(t) is exp(-1/4)/sqrt(4 pi) up to grid sampling
    assert r.measured == pytest.approx(np.exp(-0.25) / np.sqrt(4 * np.pi), rel=1e-2)


def test_scaling_invariance_for_random_fields():
    g = Grid.from_spacing(15.0, 0.02)
    res = verify.scaling_invariance_check(random_field(7), random_field(8), 1.0, [1.0, 2.0], 0.3, g)
    assert len(res) == 4
    assert all(r.passed for r in res), [r.line() for r in res]
