"""Command-line entry point: config-driven pipelines writing CSV/JSON artifacts.

Exit codes: 0 all selected checks pass, 1 some check failed, 2 configuration
error, 3 numerical error.  Errors also leave ``error.json`` in the output
directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import traceback
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__, eigen, kernel, verify
from .config import RunConfig
from .corrector import (
    adjoint_corrector,
    corrector,
    corrector_invariant_suite,
    dirichlet_monotonicity,
    effective_diffusivity,
    flux_residual,
    route_agreement,
)
from .errors import EmptyTrustRegion, HetkernError, InvalidSpec, NumericalError
from .fields import ellipticity_check
from .io import stack_columns, write_csv, write_json
from .plotting import emit_plot
from .presets import load_preset, preset_toml, presets
from .report import CheckResult, VerificationReport, config_hash

log = logging.getLogger("hetkern")

STAGES = ("corrector", "eigen", "kernel", "green", "verify")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def worker_count() -> int:
    env = os.environ.get("HETKERN_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InvalidSpec(f"HETKERN_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return min(4, os.cpu_count() or 1)


class Run:
    """Lazily computed artifacts shared by the stages of one run."""

    def __init__(self, config: RunConfig, out: Path, emit_plots: bool = False):
        self.config = config
        self.out = out
        self.emit_plots = emit_plots
        self.hash = config_hash(config.data)
        self.report = VerificationReport(self.hash)
        self.pool = ThreadPoolExecutor(max_workers=worker_count())
        self.artifacts: list[str] = []

    # shared objects ----------------------------------------------------------------

    @cached_property
    def grid(self):
        return self.config.grid()

    @cached_property
    def problem(self):
        return self.config.canonical_problem()

    @cached_property
    def T(self):
        p = self.problem
        return corrector(p.a, p.nu, p.W, p.grid)

    @cached_property
    def Tt(self):
        p = self.problem
        return adjoint_corrector(p.a, p.nu, p.W, p.grid)

    @cached_property
    def spectral(self):
        """(big-grid summary, summary on the run grid, gamma_lower estimates)."""
        c = self.config
        a, r = c.field("a"), c.field("r")
        g = self.grid
        margin = c["original"]["L_margin"]
        L_list = [g.L, g.L + margin / 2, g.L + margin]
        est = eigen.principal_value_estimate(a, r, L_list, g.h)
        gamma = c["original"].get("gamma")
        if gamma is None:
            gamma = est[-1] + c["original"]["gamma_offset"]
        big = Grid_from(g.L + margin, g.h)
        s_big = eigen.spectral_summary(a, r, gamma, big, gamma_lower=est[-1])
        return s_big, eigen.restrict_summary(s_big, g), (L_list, est)

    @cached_property
    def kernel_table(self):
        cache = self.out / "kernel.npz"
        if cache.exists():
            try:
                tab = kernel.KernelTable.load(cache)
                if tab.meta.get("config_hash") == self.hash:
                    return replace(tab, problem=self.problem)
            except (InvalidSpec, OSError, KeyError, ValueError):
                pass
        c = self.config
        tab = kernel.heat_kernel(self.problem, c["kernel"]["y"], c.kernel_times())
        tab = replace(tab, meta={**tab.meta, "config_hash": self.hash})
        tab.save(cache)
        return tab

    # helpers ---------------------------------------------------------------------------

    def add(self, *results):
        self.report.add(*results)

    def csv(self, name: str, columns: dict):
        path = write_csv(self.out / name, columns)
        self.artifacts.append(path.name)
        return path

    def map(self, fn, items):
        return list(self.pool.map(fn, items))


def Grid_from(L, h):
    from .fields import Grid

    return Grid.from_spacing(L, h)


# --- stages ---------------------------------------------------------------------------------


def stage_fields(run: Run) -> None:
    c = run.config
    for name in c.data["fields"]:
        f = c.field(name)
        mu_eff = ellipticity_check(f, run.grid, strict=True)
        run.add(CheckResult.compare(f"ellipticity_{name}", mu_eff, f.mu, "<=", inputs={"kind": f.kind}))


def stage_corrector(run: Run) -> None:
    c, p, tol = run.config, run.problem, run.config.tolerances
    T, Tt = run.T, run.Tt
    run.add(corrector_invariant_suite(T, Tt, p.mu, seed=c.seed))
    if p.W != 0:
        R = c["verify"]["route_R"]
        diff = route_agreement(T, p.a, p.nu, R) if p.W > 0 else float("nan")
        if p.W > 0:
            run.add(CheckResult.compare("corrector_route_agreement", diff, tol["route_agreement"], "<=", inputs={"R": R}))
            run.add(dirichlet_monotonicity(p.a, p.nu, p.W, [R / 4, R / 2, R], p.grid.h))
    run.add(CheckResult.finite("corrector_flux_residual", flux_residual(T, p.a, p.nu)))
    eff = effective_diffusivity(p.a, p.nu, T, p.grid.L / 2)
    run.add(CheckResult.finite("effective_diffusivity", eff.value, details={"converged": eff.converged, "running": eff.running}))
    cols = T.columns()
    cols["T_adjoint"] = Tt.T
    run.csv("corrector.csv", cols)


def stage_eigen(run: Run) -> None:
    c, tol = run.config, run.config.tolerances
    if not c.has_original:
        log.info("no [original] section: eigen stage skipped")
        return
    a, r = c.field("a"), c.field("r")
    s_big, s, (L_list, est) = run.spectral
    run.add(
        CheckResult.compare(
            "principal_value_monotone", float(np.min(np.diff(est))), -1e-10, ">=", inputs={"L": L_list}, details={"estimates": est}
        )
    )
    run.add(CheckResult.compare("wronskian_rel_std", s.wronskian_rel_std, tol["wronskian_rel_std"], "<", inputs={"gamma": s.gamma}))
    run.add(CheckResult.compare("epsilon_gap", s.epsilon_gap, 0.0, ">", details={"W_gamma": s.W_gamma}))
    res = eigen.riccati_residual(s.right, a, r)
    run.add(CheckResult.finite("riccati_residual", float(np.max(np.abs(res)))))
    induced = eigen.induced_corrector(a, s_big, run.grid)
    run.add(eigen.corrector_identification_check(s.T_gamma, induced, tol["corrector_identification"]))
    gl = s.gamma_lower
    run.add(eigen.convexity_check(a, r, (gl + 0.5 * (s.gamma - gl), s.gamma + 1.0), 0.5, run.grid))
    run.csv("eigen.csv", s.columns())


def stage_kernel(run: Run) -> None:
    c, p, tol = run.config, run.problem, run.config.tolerances
    k = c["kernel"]
    tab = run.kernel_table
    run.add(kernel.positivity_check(tab))
    run.add(kernel.conservation_check(tab, tol["conservation"]))
    run.add(CheckResult.compare("trusted_fraction", float(np.mean([tab.trust_mask(i).mean() for i in range(len(tab.times))])), 0.0, ">"))
    run.add(replace(kernel.duality_check(p, k["ck_t"], k["ck_x"], k["y"], tol["duality"])))
    run.add(kernel.chapman_kolmogorov_check(p, k["ck_t"], k["ck_t"], k["ck_x"], k["y"], tol["chapman_kolmogorov"]))
    run.csv("kernel.csv", tab.columns())
    # killed kernel on the tube around the source
    R = k["killed_R"]
    times = sorted(set(k["killed_times"]) | {R * R / 2})
    tube = kernel.TubeSpec(k["y"], R, 0.0)
    kk = kernel.killed_kernel(p, tube, k["y"], times, run.T)
    full = kernel.heat_kernel(p, k["y"], times)
    run.add(CheckResult.compare("killed_below_free", float(np.max(kk.values - full.values)), 1e-12, "<=", inputs={"R": R}))
    run.add(CheckResult.compare("killed_mass_decreasing", float(np.max(np.diff(kk.mass))), 0.0, "<"))
    jc = int(np.argmin(np.abs(run.T.T - run.T(k["y"]) - p.W * R * R / 2)))
    centre = float(kk.at(R * R / 2)[jc])
    run.add(CheckResult.finite("killed_centre_alpha_over_C", centre * R, inputs={"t": R * R / 2}))
    # supersolution of the adjoint Gaussian weight
    a_nu = p.a(p.grid.sub_midpoints()) / p.nu(p.grid.sub_midpoints())
    sig = 4 * max(1.0, float(a_nu.max())) * run.Tt.M_hat**2
    worst, _ = kernel.supersolution_residual(p, run.Tt, sigma=sig)
    run.add(CheckResult.compare("supersolution_residual", worst, -p.grid.h, ">=", inputs={"sigma": sig}))
    lit, _ = kernel.supersolution_residual(p, run.Tt)
    run.add(CheckResult("supersolution_residual_sigma_4M2", lit, None, True, "recorded", inputs={"sigma": 4 * run.Tt.M_hat**2}))
    if c.has_original:
        _, s, _ = run.spectral
        ok = kernel.heat_kernel_original(c.field("a"), c.field("r"), s.gamma, k["y"], c.kernel_times(), run.grid, summary=s)
        run.add(
            CheckResult.compare(
                "original_routes", ok.sup_relative_difference, tol["original_routes"], "<=", details={"trusted_fraction": ok.trusted_fraction}
            )
        )
        run.csv("kernel_original.csv", stack_columns([_with_route(ok.route_a, "A"), _with_route(ok.route_b, "B")]))
    if run.emit_plots:
        run.artifacts.extend(emit_plot("kernel", run.out, "kernel.csv", title=c["run"]["name"]).values())
        fit = verify.fit_gaussian_constants(tab, run.T, {"z_over_sqrt_t": c["verify"]["z_over_sqrt_t"]})
        run.csv("collapse.csv", fit.scatter_columns())
        run.artifacts.extend(emit_plot("collapse", run.out, "collapse.csv", title=c["run"]["name"]).values())


def _with_route(tab, route):
    cols = tab.columns()
    cols["route"] = np.array([route] * len(cols["t"]))
    return cols


def stage_green(run: Run) -> None:
    c, tol = run.config, run.config.tolerances
    gcfg = c["green"]
    p = run.problem
    if not p.W > 0:
        log.info("green stage needs W > 0: skipped")
        return
    g = Grid_from(gcfg["L"], run.grid.h)
    pg = p.with_grid(g)
    lam = gcfg["lambda"]
    y = c["kernel"]["y"]
    pair = kernel.green_function(pg, lam, y)
    run.add(CheckResult.compare("green_routes", pair.cross_difference, tol["green_routes"], "<=", inputs={"lambda": lam}))
    if p.a.kind == "constant" and p.nu.kind == "constant" and p.a(0.0) == 1 and p.nu(0.0) == 1:
        j = g.index(y)
        exact = 1.0 / (p.W * np.sqrt(1 + 4 * lam))
        run.add(CheckResult.compare("green_closed_form", abs(pair.elliptic.values[j] - exact) / exact, 1e-3, "<="))
    Tg = corrector(pg.a, pg.nu, pg.W, g)
    run.add(kernel.green_sandwich_constant(pair.elliptic, Tg, p.W))
    run.add(kernel.laplace_identity_check(gcfg["laplace_a"], gcfg["laplace_b"], gcfg["laplace_X"], tol["laplace"]))
    run.csv("green.csv", stack_columns([pair.elliptic.columns(), pair.quadrature.columns()]))


def stage_verify(run: Run) -> None:
    c, p, tol = run.config, run.problem, run.config.tolerances
    v = c["verify"]
    region = {"z_over_sqrt_t": v["z_over_sqrt_t"]}
    tab = run.kernel_table
    if not any(tab.trust_mask(i).any() for i in range(len(tab.times))):
        raise EmptyTrustRegion("kernel trust region is empty; verify refused")
    fit = verify.fit_gaussian_constants(tab, run.T, region)
    run.add(fit.checks("gaussian"))
    full = verify.fit_gaussian_constants(tab, run.T)
    run.add(CheckResult.finite("gaussian_C_up_full_trust_region", full.C_up, details={"collapse_constant": full.collapse_constant}))
    run.csv("scatter.csv", fit.scatter_columns())
    y, times = c["kernel"]["y"], c.kernel_times()

    def fit_for(args):
        W, refine = args
        pb = c.canonical_problem(W=W, refine=refine)
        tb = kernel.heat_kernel(pb, y, times)
        Tb = corrector(pb.a, pb.nu, pb.W, pb.grid)
        return tb, verify.fit_gaussian_constants(tb, Tb, region)

    jobs = [(p.W, 1)] if v["refine"] else []
    sweep = [W for W in c["canonical"]["W_sweep"] if W > 0]
    jobs += [(W, 0) for W in sweep]
    results = run.map(fit_for, jobs)
    if v["refine"]:
        tab_fine, fine = results.pop(0)
        d = verify.refinement_deltas(fit, fine)
        run.add(CheckResult.compare("gaussian_refinement", max(d.values()), tol["refinement"], "<", details=d))
        nb = verify.nash_exponent(tab, seed=c.seed)
        nf = verify.nash_exponent(tab_fine, seed=c.seed)
        run.add(nb.check())
        run.add(
            CheckResult.compare(
                "nash_refinement", abs(nb.beta_hat - nf.beta_hat), tol["nash_refinement"], "<=", details={"beta_h": nb.beta_hat, "beta_h2": nf.beta_hat}
            )
        )
    else:
        run.add(verify.nash_exponent(tab, seed=c.seed).check())
    if len(sweep) >= 2:
        ups = [f.C_up for _, f in results]
        lows = [f.C_low for _, f in results]
        factor = max(max(ups) / min(ups), max(lows) / min(lows))
        run.add(CheckResult.compare("gaussian_W_independence", factor, tol["w_sweep_factor"], "<=", inputs={"W": sweep}, details={"C_up": ups, "C_low": lows}))
    if c.has_original:
        _, s, _ = run.spectral
        U = kernel.heat_kernel_original(c.field("a"), c.field("r"), s.gamma, y, times, run.grid, summary=s).route_b
        ofit = verify.verify_original_bounds(U, s, region=region)
        run.add(ofit.checks("original_gaussian"))
    # oscillation contraction over a longer window
    t_osc = np.round(np.arange(c["kernel"]["t_min"], v["osc_t_max"] + 1e-12, c["kernel"]["dt_out"]), 12)
    tab_osc = kernel.heat_kernel(p, y, t_osc)
    rhos = []
    for s_ in v["tube_s"]:
        r = verify.oscillation_contraction(tab_osc, run.T, y, v["tube_R"], s_, v["delta"])
        rhos.append(r.measured)
        run.add(r)
    if len(rhos) >= 3:
        slope = float(np.polyfit(v["tube_s"], rhos, 1)[0])
        run.add(CheckResult.compare("oscillation_trend", slope, 0.0, "<=", details={"rho": rhos, "s": v["tube_s"]}))
    j = run.grid.index(y)
    p0 = np.zeros(run.grid.n)
    p0[j] = 1.0 / (run.grid.h * tab.weight[j])
    run.add(verify.l1_linf_constant(p0, np.zeros_like(p0), p, times))
    run.add(verify.near_diagonal_check(tab, run.T, v["near_diagonal_r"]))
    run.add(verify.scaling_invariance_check(p.a, p.nu, p.W, v["scaling_sigma"], v["scaling_z"], run.grid, y=y, threshold=tol["scaling"]))
    if run.emit_plots:
        run.artifacts.extend(emit_plot("collapse", run.out, "scatter.csv", title=c["run"]["name"]).values())


STAGE_FUNCS = {
    "corrector": stage_corrector,
    "eigen": stage_eigen,
    "kernel": stage_kernel,
    "green": stage_green,
    "verify": stage_verify,
}


def execute(config: RunConfig, out, emit_plots: bool = False) -> tuple[int, VerificationReport]:
    """Run the selected pipeline(s); returns (exit code, report)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(config, out, emit_plots)
    try:
        stage_fields(run)
        stages = STAGES if config.pipeline == "all" else (config.pipeline,)
        for st in stages:
            log.info("stage %s", st)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                STAGE_FUNCS[st](run)
    finally:
        run.pool.shutdown()
    doc = run.report.to_json()
    doc["config"] = config.data
    doc["pipeline"] = config.pipeline
    write_json(out / "report.json", doc)
    return (EXIT_OK if run.report.passed else EXIT_FAIL), run.report


def _error_record(out: Path, exc: BaseException, code: int) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_json(
            out / "error.json",
            {"error": type(exc).__name__, "message": str(exc), "exit_code": code, "toolkit_version": __version__},
        )
    except OSError:
        pass


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetkern", description="Correctors, eigenfunctions, heat kernels and bound verification.")
    ap.add_argument("--version", action="version", version=f"hetkern {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        sp = sub.add_parser(name, help=f"run the {name} pipeline")
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="TOML run configuration")
        src.add_argument("--preset", choices=presets(), help="built-in configuration")
        sp.add_argument("--out", type=Path, default=Path("hetkern-out"), help="output directory")
        sp.add_argument("--emit-plots", action="store_true", help="write plot scripts (and PNGs when matplotlib is available)")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--grid-refine", type=int, default=0, metavar="K", help="halve h K times")
        sp.add_argument("-v", "--verbose", action="store_true")
    pp = sub.add_parser("presets", help="list presets or print one as TOML")
    pp.add_argument("name", nargs="?", choices=presets())
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        print(preset_toml(args.name) if args.name else "\n".join(presets()))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = args.out
    try:
        cfg = RunConfig.from_file(args.config) if args.config else load_preset(args.preset)
        cfg = cfg.with_overrides(pipeline=args.command, seed=args.seed, grid_refine=args.grid_refine)
        worker_count()
        code, report = execute(cfg, out, args.emit_plots)
    except InvalidSpec as exc:
        print(f"configuration error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _error_record(out, exc, EXIT_CONFIG)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _error_record(out, exc, EXIT_NUMERIC)
        return EXIT_NUMERIC
    except HetkernError as exc:  # pragma: no cover - every subclass is mapped above
        traceback.print_exc()
        _error_record(out, exc, EXIT_NUMERIC)
        return EXIT_NUMERIC
    print(report.summary())
    print(f"{'PASS' if code == 0 else 'FAIL'}: {sum(e.passed for e in report.entries)}/{len(report)} checks passed -> {out / 'report.json'}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
