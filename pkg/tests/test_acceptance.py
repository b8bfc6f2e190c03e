"""Acceptance criteria 1-11, each at its stated tolerance.

Every criterion records one PASS/FAIL line (printed as it runs and collected
in the terminal summary).  Criteria with several parts pass only when every
part passes.
"""

import sys
import time
import warnings
from functools import lru_cache

import numpy as np
import pytest

from hetkern import eigen, kernel, verify
from hetkern.corrector import adjoint_corrector, corrector, route_agreement
from hetkern.fields import Grid, ProblemSpec, make_field
from hetkern.presets import load_preset, presets

from conftest import ACCEPTANCE, constant, gaussian

PRESETS = presets()


def record(n, label, ok, detail):
    ACCEPTANCE.setdefault(n, []).append((label, bool(ok), detail))
    print(f"criterion {n:2d} [{label}]: {'PASS' if ok else 'FAIL'} -- {detail}")
    return bool(ok)


# --- shared per-preset computations --------------------------------------------------------


@lru_cache(maxsize=None)
def spectral(name):
    c = load_preset(name)
    a, r, g = c.field("a"), c.field("r"), c.grid()
    margin = c["original"]["L_margin"]
    est = eigen.principal_value_estimate(a, r, [g.L, g.L + margin / 2, g.L + margin], g.h)
    gamma = c["original"].get("gamma", est[-1] + c["original"].get("gamma_offset", 0.0))
    big = eigen.spectral_summary(a, r, gamma, Grid.from_spacing(g.L + margin, g.h), gamma_lower=est[-1])
    return big, eigen.restrict_summary(big, g)


@lru_cache(maxsize=None)
def kernel_suite(name):
    """Kernels, correctors and fits used by criteria 7 and 10 (timed per preset)."""
    t0 = time.perf_counter()
    c = load_preset(name)
    y, times = c["kernel"]["y"], c.kernel_times()
    region = {"z_over_sqrt_t": c["verify"]["z_over_sqrt_t"]}

    def build(W, refine):
        p = c.canonical_problem(W=W, refine=refine)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            tab = kernel.heat_kernel(p, y, times)
        T = corrector(p.a, p.nu, p.W, p.grid)
        return p, tab, T, verify.fit_gaussian_constants(tab, T, region)

    base = build(c["canonical"]["W"], 0)
    fine = build(c["canonical"]["W"], 1)
    sweep = {W: build(W, 0)[3] for W in c["canonical"]["W_sweep"]}
    nash = (verify.nash_exponent(base[1], seed=c.seed), verify.nash_exponent(fine[1], seed=c.seed))
    v = c["verify"]
    p = base[0]
    t_osc = np.round(np.arange(c["kernel"]["t_min"], v["osc_t_max"] + 1e-12, c["kernel"]["dt_out"]), 12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tab_osc = kernel.heat_kernel(p, y, t_osc)
    osc = [verify.oscillation_contraction(tab_osc, base[2], y, v["tube_R"], s, v["delta"]) for s in v["tube_s"]]
    return {"base": base, "fine": fine, "sweep": sweep, "nash": nash, "osc": osc, "seconds": time.perf_counter() - t0}


# --- criteria --------------------------------------------------------------------------------


def test_criterion_01_constant_coefficient_kernel():
    t0 = time.perf_counter()
    g = Grid.from_spacing(20.0, 0.02)
    one = constant(1.0)
    times = np.round(np.arange(0.1, 1.0 + 1e-12, 0.05), 12)
    worst = 0.0
    for W in (0.0, 1.0):
        tab = kernel.heat_kernel(ProblemSpec(one, g, nu=one, W=W), 0.0, times)
        for k, t in enumerate(tab.times):
            near = np.abs(g.x - W * t) <= 4 * np.sqrt(t)
            exact = gaussian(t, g.x[near], 0.0, W)
            worst = max(worst, float(np.max(np.abs(tab.values[k, near] - exact) / exact)))
    secs = time.perf_counter() - t0
    ok = record(1, "advected Gaussian", worst <= 1e-2 and secs < 60, f"max rel err {worst:.3e} <= 1e-2, {secs:.2f}s < 60s")
    assert ok


def random_pair(k):
    spec = {"kind": "piecewise-random", "mu": 2.0, "params": {"values": [0.5, 2.0], "width": 1.0}}
    return make_field({**spec, "seed": 100 + 2 * k}), make_field({**spec, "seed": 101 + 2 * k})


@pytest.mark.parametrize("k", range(5))
def test_criterion_02_corrector_bounds(k):
    t0 = time.perf_counter()
    mu, W = 2.0, 1.0
    g = Grid.from_spacing(20.0, 0.02)
    a, nu = random_pair(k)
    T, Tt = corrector(a, nu, W, g), adjoint_corrector(a, nu, W, g)
    lo, hi = min(T.m_hat, Tt.m_hat), max(T.M_hat, Tt.M_hat)
    gap = float(np.max(np.abs(T.T - Tt.T)))
    tau = 4 * mu**7 / W + 1e-3
    secs = time.perf_counter() - t0
    ok = lo >= mu**-5 and hi <= mu**5 and gap <= tau and secs < 10
    record(2, f"field {k}", ok, f"T' in [{lo:.3g}, {hi:.3g}] within [2^-5, 2^5], |T-T~| {gap:.3g} <= {tau:.4g}, {secs:.2f}s < 10s")
    assert ok


@pytest.mark.parametrize("name", ["random-mu2", "periodic", "quasiperiodic"])
def test_criterion_03_dual_route_corrector(name):
    c = load_preset(name)
    p = c.canonical_problem()
    T = corrector(p.a, p.nu, p.W, p.grid)
    diff = route_agreement(T, p.a, p.nu, 40.0)
    ok = record(3, name, diff <= 1e-3, f"sup-rel difference on [0, 20] {diff:.3e} <= 1e-3")
    assert ok


def test_criterion_04_explicit_spectral_case():
    big, s = spectral("constant-w1")
    assert s.gamma == 1.0
    errs = {
        "w": float(np.max(np.abs(s.right.w + 1.0))),
        "W_gamma": abs(s.W_gamma - 2.0),
        "nu_gamma": float(np.max(np.abs(s.nu_gamma - 1.0))),
        "T_gamma": float(np.max(np.abs(s.T_gamma - s.grid.x))),
    }
    ok = record(4, "a=1, r=0, gamma=1", max(errs.values()) <= 1e-4, ", ".join(f"{k} err {v:.2e}" for k, v in errs.items()) + " <= 1e-4")
    assert ok


def test_criterion_05_spectral_corrector_identification():
    c = load_preset("periodic")
    big, s = spectral("periodic")
    assert c["fields"]["r"]["mu"] == 2.0 and s.gamma == pytest.approx(s.gamma_lower + 1.0)
    induced = eigen.induced_corrector(c.field("a"), big, c.grid())
    r = eigen.corrector_identification_check(s.T_gamma, induced, 1e-3)
    ok = record(5, "periodic r, gamma = gamma_lower + 1", r.passed, f"sup-rel |T_gamma - T| {r.measured:.3e} < 1e-3")
    assert ok


@pytest.mark.parametrize("name", PRESETS)
def test_criterion_06_wronskian_constancy(name):
    _, s = spectral(name)
    ok = record(6, name, s.wronskian_rel_std < 1e-5, f"relative std {s.wronskian_rel_std:.2e} < 1e-5 (W_gamma = {s.W_gamma:.6g})")
    assert ok


@pytest.mark.parametrize("name", PRESETS)
def test_criterion_07_sandwich_fits(name):
    suite = kernel_suite(name)
    fit, fine = suite["base"][3], suite["fine"][3]
    finite = np.isfinite(fit.C_up) and np.isfinite(fit.C_low)
    d = verify.refinement_deltas(fit, fine)
    ups = [f.C_up for f in suite["sweep"].values()]
    lows = [f.C_low for f in suite["sweep"].values()]
    factor = max(max(ups) / min(ups), max(lows) / min(lows))
    secs = suite["seconds"]
    ok = finite and max(d.values()) < 0.1 and factor <= 1.5 and secs < 300
    record(
        7,
        name,
        ok,
        f"C_up {fit.C_up:.4g}, C_low {fit.C_low:.4g}; h/2 change {max(d.values()):.3%} < 10%; "
        f"W in {{0.5,1,2}} factor {factor:.3f} <= 1.5; {secs:.1f}s < 300s",
    )
    assert ok


def test_criterion_07_constant_upper_constant_window():
    # On |z| <= 6 sqrt(t) the exact Gaussian itself needs only C_up ~ 3.155 (the
    # window never reaches the z^2/t range where C = 4 binds), so this part of the
    # criterion is expected to fail; it is kept at its stated band.
    fit = kernel_suite("constant-w1")["base"][3]
    ok = record(7, "constant C_up in [3.5, 4.5]", 3.5 <= fit.C_up <= 4.5, f"C_up {fit.C_up:.4f} on |z| <= 6 sqrt(t)")
    assert ok


def test_criterion_08_semigroup_and_duality():
    c = load_preset("random-mu2")
    p = c.canonical_problem()
    xs, y = c["kernel"]["ck_x"], c["kernel"]["y"]
    ck = kernel.chapman_kolmogorov_check(p, 0.25, 0.25, xs, y, 1e-2)
    du = kernel.duality_check(p, 0.25, xs, y, 1e-2)
    ok = ck.comparison != "skipped" and ck.passed and du.passed
    record(8, "random-mu2, t = s = 0.25", ok, f"Chapman-Kolmogorov {ck.measured:.2e} < 1e-2, duality {du.measured:.2e} < 1e-2")
    assert ok


@pytest.mark.parametrize("name", PRESETS)
def test_criterion_09_green_functions(name):
    c = load_preset(name)
    gc = c["green"]
    p = c.canonical_problem()
    g = Grid.from_spacing(gc["L"], p.grid.h)
    pg = p.with_grid(g)
    pair = kernel.green_function(pg, gc["lambda"], 0.0)
    parts = [f"routes {pair.cross_difference:.2e} <= 5e-3"]
    ok = pair.cross_difference <= 5e-3
    if name == "constant-w1":
        exact = 1 / (p.W * np.sqrt(1 + 4 * gc["lambda"]))
        err = abs(pair.elliptic.values[g.index(0.0)] - exact) / exact
        ok &= err <= 1e-3
        parts.append(f"closed form at x=y {err:.2e} <= 1e-3")
    sw = kernel.green_sandwich_constant(pair.elliptic, corrector(pg.a, pg.nu, pg.W, g), p.W)
    ok &= sw.passed
    parts.append(f"sandwich C {sw.measured:.4g} finite")
    lap = [r for ab in ((1.0, 1.0), (0.3, 2.0), (2.5, 0.4)) for r in kernel.laplace_identity_check(*ab, [0.0, 0.5, 1.0, 2.0, 5.0], 1e-6)]
    lap_err = max(r.measured for r in lap)
    ok &= all(r.passed for r in lap)
    parts.append(f"identity X >= 0 {lap_err:.1e} <= 1e-6")
    record(9, name, ok, ", ".join(parts))
    assert ok


@pytest.mark.parametrize("name", PRESETS)
def test_criterion_10_regularity(name):
    suite = kernel_suite(name)
    nb, nf = suite["nash"]
    rhos = [r.measured for r in suite["osc"]]
    ok = nb.check().passed and nf.check().passed and abs(nb.beta_hat - nf.beta_hat) <= 0.05 and all(r.passed for r in suite["osc"])
    record(
        10,
        name,
        ok,
        f"beta_hat {nb.beta_hat:.3f} (h/2: {nf.beta_hat:.3f}), C_hat {nb.C_hat:.3g}; rho_hat max {max(rhos):.3f} < 1",
    )
    assert ok


@lru_cache(maxsize=None)
def drift_exposed_fits():
    """Constant coefficients with a strong drift and long times, where z is dominated by W t."""
    one = constant(1.0)
    W, g, y = 8.0, Grid.from_spacing(70.0, 0.05), -36.0
    times = np.round(np.arange(0.25, 9.0 + 1e-12, 0.25), 12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tab = kernel.heat_kernel(ProblemSpec(one, g, nu=one, W=W), y, times)
    T = corrector(one, one, W, g)
    region = {"z_over_sqrt_t": 6.0}
    return tab, T, region, verify.fit_gaussian_constants(tab, T, region)


def test_criterion_11_negative_control_corrector_slope():
    from dataclasses import replace

    tab, T, region, good = drift_exposed_fits()
    bad = verify.fit_gaussian_constants(tab, replace(T, T=1.1 * T.T), region)
    ratio = bad.C / good.C
    ok = record(11, "corrupted T slope x1.1", ratio >= 2, f"fitted C {good.C:.4g} -> {bad.C:.4g}, degradation {ratio:.2f}x >= 2x")
    assert ok


def test_criterion_11_negative_control_wrong_drift():
    tab, T, region, good = drift_exposed_fits()
    bad = verify.fit_gaussian_constants(tab, T, region, W=1.1 * T.W)
    ratio = bad.C / good.C
    ok = record(11, "wrong W x1.1", ratio >= 2, f"fitted C {good.C:.4g} -> {bad.C:.4g}, degradation {ratio:.2f}x >= 2x")
    assert ok


def test_criterion_11_negative_control_wrong_invariant_measure():
    c = load_preset("periodic")
    big, s = spectral("periodic")
    a, g = c.field("a"), c.grid()
    good = eigen.corrector_identification_check(s.T_gamma, eigen.induced_corrector(a, big, g)).measured
    bad = eigen.corrector_identification_check(s.T_gamma, eigen.induced_corrector(a, big, g, nu_scale=1.1)).measured
    ratio = bad / good
    ok = record(11, "wrong nu_gamma x1.1", ratio >= 2, f"identification error {good:.2e} -> {bad:.2e}, degradation {ratio:.3g}x >= 2x")
    assert ok


if __name__ == "__main__":  # pragma: no cover
    sys.exit(pytest.main([__file__, "-q"]))
