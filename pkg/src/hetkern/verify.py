"""Fits of Gaussian-sandwich constants and the regularity / scaling checks.

All fits work on the trusted part of a :class:`~hetkern.kernel.KernelTable` and
drop values below ``VALUE_FLOOR``, where floating-point noise makes a lower
bound unverifiable.  Per-point constants come from monotone bisection; global
constants are their maxima.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .corrector import CorrectorSolution, corrector
from .errors import DegenerateSample, DomainTooSmall, EmptyTrustRegion, EmptyTube
from .fields import CoefficientField, Grid, ProblemSpec
from .kernel import KernelTable, Operator, _evolve, heat_kernel, operator_for, tube_mask, TubeSpec
from .report import CheckResult

VALUE_FLOOR = 1e-12
BISECT_TOL = 1e-4
BETA_GRID = np.linspace(0.05, 0.95, 64)


# --- Gaussian sandwich ------------------------------------------------------------


def _min_constant(ok, n: int, tol: float = BISECT_TOL, cap: float = 1e12) -> np.ndarray:
    """Vectorised smallest C with ``ok(C)`` true, for predicates monotone in C (false -> true).

    The bracket starts at C = 1 and doubles until satisfied (and halves while
    still satisfied), then bisects to relative accuracy ``tol``.
    """
    hi = np.ones(n)
    for _ in range(64):
        bad = ~ok(hi)
        if not bad.any():
            break
        hi[bad] *= 2
    hi[~ok(hi)] = np.inf
    lo = hi / 2
    for _ in range(64):
        still = np.isfinite(lo) & ok(lo) & (lo > 1e-12)
        if not still.any():
            break
        hi[still] = lo[still]
        lo[still] /= 2
    fin = np.isfinite(hi)
    for _ in range(200):
        if not np.any(fin & (hi - lo > tol * hi)):
            break
        mid = 0.5 * (lo + hi)
        good = ok(np.where(fin, mid, 1.0))
        hi = np.where(fin & good, mid, hi)
        lo = np.where(fin & ~good, mid, lo)
    hi[hi > cap] = np.inf
    return hi


def upper_constants(lnP: np.ndarray, t: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-point smallest C with ``ln P <= ln C - ln(t)/2 - z^2/(C t)``."""
    u = z * z / t
    base = lnP + 0.5 * np.log(t)
    return _min_constant(lambda C: np.log(C) - u / C >= base, len(lnP))


def lower_constants(lnP: np.ndarray, t: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-point smallest C with ``-ln C - ln(t)/2 - C z^2/t <= ln P``."""
    u = z * z / t
    base = lnP + 0.5 * np.log(t)
    return _min_constant(lambda C: -np.log(C) - C * u <= base, len(lnP))


@dataclass(frozen=True)
class GaussianFitReport:
    C_up: float
    C_low: float
    worst_upper: tuple[float, float]  # (t, x)
    worst_lower: tuple[float, float]
    per_time: dict  # t -> (C_up, C_low)
    region: dict
    n_points: int
    collapse_slope: float
    collapse_constant: float
    scatter: dict = field(repr=False, default_factory=dict)
    refinement_deltas: dict = field(default_factory=dict)

    @property
    def C(self) -> float:
        return max(self.C_up, self.C_low)

    def scatter_columns(self) -> dict[str, np.ndarray]:
        return {"t": self.scatter["t"], "x": self.scatter["x"], "z2_over_t": self.scatter["u"], "ln_P_sqrt_t": self.scatter["v"]}

    def checks(self, prefix: str = "gaussian") -> list[CheckResult]:
        reg = {k: v for k, v in self.region.items()}
        return [
            CheckResult.finite(f"{prefix}_C_up", self.C_up, inputs=reg, details={"worst": self.worst_upper}),
            CheckResult.finite(f"{prefix}_C_low", self.C_low, inputs=reg, details={"worst": self.worst_lower}),
        ]


def fit_gaussian_constants(
    kernel: KernelTable,
    T: CorrectorSolution,
    region: dict | None = None,
    W: float | None = None,
) -> GaussianFitReport:
    """Smallest constants of the two-sided Gaussian bound in corrector coordinates.

    ``region`` may restrict ``|z| <= z_over_sqrt_t * sqrt(t)`` and ``t_min <= t <= t_max``.
    """
    region = dict(region or {})
    W = T.W if W is None else W
    t, x, P, idx = kernel.trusted()
    z = T.T[idx] - T(kernel.y) - W * t
    sel = P >= VALUE_FLOOR
    if "z_over_sqrt_t" in region:
        sel &= np.abs(z) <= region["z_over_sqrt_t"] * np.sqrt(t)
    if "t_min" in region:
        sel &= t >= region["t_min"] - 1e-12
    if "t_max" in region:
        sel &= t <= region["t_max"] + 1e-12
    if not sel.any():
        raise EmptyTrustRegion("no trusted kernel values in the fit region")
    t, x, P, z = t[sel], x[sel], P[sel], z[sel]
    lnP = np.log(P)
    cu = upper_constants(lnP, t, z)
    cl = lower_constants(lnP, t, z)
    iu, il = int(np.argmax(cu)), int(np.argmax(cl))
    per_time = {}
    for tk in np.unique(t):
        mk = t == tk
        per_time[float(tk)] = (float(cu[mk].max()), float(cl[mk].max()))
    u = z * z / t
    v = lnP + 0.5 * np.log(t)
    slope = float(np.polyfit(u, v, 1)[0]) if np.ptp(u) > 0 else float("nan")
    return GaussianFitReport(
        C_up=float(cu[iu]),
        C_low=float(cl[il]),
        worst_upper=(float(t[iu]), float(x[iu])),
        worst_lower=(float(t[il]), float(x[il])),
        per_time=per_time,
        region={**region, "W": W, "y": kernel.y},
        n_points=int(len(t)),
        collapse_slope=slope,
        collapse_constant=float(-1.0 / slope) if slope < 0 else float("inf"),
        scatter={"t": t, "x": x, "u": u, "v": v},
    )


def spectral_corrector(summary) -> CorrectorSolution:
    """The spectral ``T_gamma`` wrapped as a corrector on the summary grid."""
    g = summary.grid
    Tg = summary.T_gamma - summary.T_gamma[g.center]
    slopes = np.diff(Tg) / g.h
    Tp = np.gradient(Tg, g.h)
    return CorrectorSolution(g, Tg, Tp, Tp * summary.nu_gamma, summary.W_gamma, "spectral", float(slopes.min()), float(slopes.max()))


def ground_state_quotient(U: KernelTable, summary) -> KernelTable:
    """``U(t,x,y) phi(y)/phi(x) e^{-gamma t}`` from ln phi differences."""
    lnphi = summary.right.lnphi
    j = U.grid.index(U.y)
    factor = np.exp(lnphi[j] - lnphi[None, :] - summary.gamma * U.times[:, None])
    return replace(U, values=U.values * factor, kind="canonical-quotient")


def verify_original_bounds(U: KernelTable, summary, T: CorrectorSolution | None = None, region: dict | None = None) -> GaussianFitReport:
    """Gaussian fit of the ground-state quotient of ``U`` in the coordinates ``T_gamma``, ``W_gamma``."""
    if T is None:
        T = spectral_corrector(summary)
    return fit_gaussian_constants(ground_state_quotient(U, summary), T, region, W=summary.W_gamma)


def refinement_deltas(coarse: GaussianFitReport, fine: GaussianFitReport) -> dict:
    """Relative changes of the constants between two grid levels."""
    return {
        "C_up": abs(fine.C_up - coarse.C_up) / coarse.C_up,
        "C_low": abs(fine.C_low - coarse.C_low) / coarse.C_low,
    }


# --- Nash exponent -----------------------------------------------------------------------


@dataclass(frozen=True)
class NashResult:
    beta_hat: float
    C_hat: float
    slopes: np.ndarray
    n_pairs: int

    def check(self) -> CheckResult:
        ok = 0 < self.beta_hat < 1 and np.isfinite(self.C_hat)
        return CheckResult("nash_exponent", self.beta_hat, None, bool(ok), "finite", details={"C_hat": self.C_hat, "pairs": self.n_pairs})


def nash_exponent(kernel: KernelTable, l1_norm: float | None = None, n_anchor: int = 200, seed: int = 0) -> NashResult:
    """Hölder exponent estimate from oscillations of a kernel column.

    At every trusted time, random anchors are paired with nodes at the
    geometric distances ``d = h 2^k <= sqrt(t)/2`` on both sides.  For each beta
    on a 64-point grid, ``ln|dp| + (1+beta)/2 ln t`` is regressed on ``ln d``
    after removing the per-anchor mean (the amplitude of p varies by orders of
    magnitude between anchors); beta is admissible when it does not exceed the
    slope.  The largest admissible beta is returned with
    ``C_hat = sup |dp| t^{(1+beta)/2} / (|p0|_1 d^beta)``.
    """
    if l1_norm is None:
        j = kernel.grid.index(kernel.y)
        l1_norm = 1.0 / kernel.weight[j]  # |delta_y / nu(y)|_{L^1}
    rng = np.random.default_rng(seed)
    h = kernel.grid.h
    dps, ts, ds, groups = [], [], [], []
    gid = 0
    for k, t in enumerate(kernel.times):
        mk = kernel.trust_mask(k)
        nodes = np.nonzero(mk)[0]
        if len(nodes) < 3:
            continue
        kmax = int(np.floor(np.log2(max(0.5 * np.sqrt(t) / h, 1.0))))
        offs = 2 ** np.arange(kmax + 1)
        anchors = rng.choice(nodes, size=min(n_anchor, len(nodes)), replace=False)
        p = kernel.values[k]
        for a in anchors:
            for sgn in (-1, 1):
                b = a + sgn * offs
                ok = (b >= 0) & (b < len(p))
                ok[ok] &= mk[b[ok]]
                if ok.sum() < 2:
                    continue
                dps.append(np.abs(p[b[ok]] - p[a]))
                ds.append(offs[ok] * h)
                ts.append(np.full(ok.sum(), t))
                groups.append(np.full(ok.sum(), gid))
                gid += 1
    if not dps:
        raise EmptyTrustRegion("no trusted samples for the Nash exponent")
    dp, t, d, grp = (np.concatenate(v) for v in (dps, ts, ds, groups))
    keep = dp >= VALUE_FLOOR
    if not keep.any():
        raise DegenerateSample("all sampled oscillations are below 1e-12")
    dp, t, d, grp = dp[keep], t[keep], d[keep], grp[keep]
    ld = np.log(d)
    counts = np.bincount(grp)
    multi = counts[grp] >= 2
    if not multi.any():
        raise DegenerateSample("no anchor with two resolved oscillations")

    def demean(v):
        sums = np.bincount(grp[multi], weights=v[multi], minlength=len(counts))
        return v[multi] - sums[grp[multi]] / counts[grp[multi]]

    xd = demean(ld)
    slopes = np.empty(len(BETA_GRID))
    for i, beta in enumerate(BETA_GRID):
        yv = np.log(dp) + 0.5 * (1 + beta) * np.log(t) - np.log(l1_norm)
        slopes[i] = float(xd @ demean(yv) / (xd @ xd)) if xd @ xd > 0 else np.nan
    admissible = BETA_GRID <= slopes
    beta_hat = float(BETA_GRID[admissible].max()) if admissible.any() else float(BETA_GRID[0])
    C_hat = float(np.max(dp * t ** (0.5 * (1 + beta_hat)) / (l1_norm * d**beta_hat)))
    return NashResult(beta_hat, C_hat, slopes, int(len(dp)))


# --- oscillation contraction ------------------------------------------------------------


def tube_oscillation(kernel: KernelTable, T: CorrectorSolution, xi: float, R: float, s: float, W: float | None = None) -> float:
    """max - min of p over nodes with ``|T(x) - T(xi) - W t| < R`` and output times in [s, s + R^2]."""
    W = T.W if W is None else W
    tube = TubeSpec(xi, R, s)
    vals = []
    for k, t in enumerate(kernel.times):
        if s - 1e-12 <= t <= s + R * R + 1e-12:
            mk = tube_mask(T, tube, t, W)
            if mk[0] or mk[-1]:
                raise DomainTooSmall("tube reaches the grid boundary")
            if mk.any():
                vals.append(kernel.values[k, mk])
    if not vals:
        raise EmptyTube(f"no nodes in tube (xi={xi}, R={R}, s={s})")
    v = np.concatenate(vals)
    return float(v.max() - v.min())


def oscillation_contraction(kernel: KernelTable, T: CorrectorSolution, xi: float, R: float, s: float, delta: float = 0.5) -> CheckResult:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    big = tube_oscillation(kernel, T, xi, R, s)
    small = tube_oscillation(kernel, T, xi, delta * R, s)
    rho = small / big if big > 0 else float("nan")
    return CheckResult.compare("oscillation_contraction", rho, 1.0, "<", inputs={"xi": xi, "R": R, "s": s, "delta": delta})


# --- L1 -> Linf --------------------------------------------------------------------------


def l1_linf_constant(p0: np.ndarray, q0: np.ndarray, problem: ProblemSpec, t_list) -> CheckResult:
    """``sup_t sqrt(t) |p(t) - q(t)|_inf / |p0 - q0|_1`` with both data evolved separately."""
    op = operator_for(problem)
    h = problem.grid.h
    l1 = float(np.sum(np.abs(p0 - q0)) * h)
    if not l1 > 0:
        raise ValueError("p0 and q0 coincide")
    t_out, P, *_ = _evolve(op, np.asarray(p0, float), t_list)
    _, Q, *_ = _evolve(op, np.asarray(q0, float), t_list)
    L = problem.grid.L
    inner = np.abs(problem.grid.x) <= L - 5 * np.sqrt(t_out.max() * problem.mu)
    vals = np.sqrt(t_out) * np.max(np.abs(P - Q)[:, inner], axis=1) / l1
    return CheckResult.finite("l1_linf_constant", float(vals.max()), inputs={"t": t_out.tolist(), "W": problem.W}, details={"per_time": vals.tolist()})


# --- near diagonal -------------------------------------------------------------------------


def near_diagonal_check(kernel: KernelTable, T: CorrectorSolution, r_param: float = 1.0, W: float | None = None) -> CheckResult:
    """inf of ``sqrt(t) P`` over trusted points with ``|z| <= r sqrt(t)``; implied C = 1/inf."""
    W = T.W if W is None else W
    t, x, P, idx = kernel.trusted()
    z = T.T[idx] - T(kernel.y) - W * t
    sel = np.abs(z) <= r_param * np.sqrt(t)
    if not sel.any():
        raise EmptyTrustRegion("no trusted points near the diagonal")
    inf = float(np.min(np.sqrt(t[sel]) * P[sel]))
    C = 1.0 / inf if inf > 0 else float("inf")
    return CheckResult("near_diagonal", inf, 0.0, bool(inf > 0), ">", inputs={"r": r_param}, details={"C": C})


# --- scaling invariance ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingResult:
    sigma: float
    z: float
    kernel_difference: float
    corrector_difference: float


def scaling_invariance_check(
    a: CoefficientField,
    nu: CoefficientField,
    W: float,
    sigma_list,
    z_shift: float,
    grid: Grid,
    y: float = 0.0,
    t_list=(0.25, 0.5, 1.0),
    threshold: float = 1e-2,
) -> list[CheckResult]:
    """Solve the rescaled problem ``x -> f(sigma (x + z))``, drift ``sigma W`` directly and compare.

    Kernel: ``P_sigma(t, x', y')`` vs ``sigma P(sigma^2 t, sigma(x'+z), sigma(y'+z))``.
    Corrector: ``T_sigma(x')`` vs ``(T(sigma(x'+z)) - T(sigma z)) / sigma``.
    The rescaled grid has spacing ``h / sigma`` so the images of its nodes are
    nodes of ``grid``; this needs ``sigma z`` to be a multiple of ``h``.
    """
    h = grid.h
    base = ProblemSpec(a, grid, nu=nu, W=W)
    T = corrector(a, nu, W, grid)
    out = []
    for sigma in sigma_list:
        shift = sigma * z_shift / h
        if abs(shift - round(shift)) > 1e-9:
            raise DomainTooSmall(f"sigma*z = {sigma * z_shift} is not a multiple of h = {h}")
        shift = int(round(shift))
        yp = y / sigma - z_shift
        Lp = grid.L / sigma
        gs = Grid.from_spacing(Lp, h / sigma)
        if abs(gs.x[gs.index(yp)] - yp) > 1e-9:
            raise DomainTooSmall("rescaled source is not a node")
        ps = ProblemSpec(a.rescaled(sigma, z_shift), gs, nu=nu.rescaled(sigma, z_shift), W=sigma * W)
        ts = np.asarray(t_list, float)
        Ps = heat_kernel(ps, yp, ts)
        P = heat_kernel(base, y, sigma**2 * ts)
        # node i of gs maps to sigma*(x'_i + z) = (i - c') h + sigma z -> index (i - c') + c + shift of grid
        img = np.arange(gs.n) - gs.center + grid.center + shift
        valid = (img >= 0) & (img < grid.n)
        num = den = 0.0
        for k in range(len(ts)):
            mk = Ps.trust_mask(k) & valid
            mk[valid] &= P.trust_mask(k)[img[valid]]
            if mk.any():
                ref = sigma * P.values[k, img[mk]]
                num = max(num, float(np.max(np.abs(Ps.values[k, mk] - ref))))
                den = max(den, float(np.max(np.abs(ref))))
        if den == 0:
            raise DomainTooSmall("no common trusted region for the rescaled kernels")
        kdiff = num / den
        Ts = corrector(ps.a, ps.nu, ps.W, gs)
        Tref = (T.T[img[valid]] - T(sigma * z_shift)) / sigma
        cdiff = float(np.max(np.abs(Ts.T[valid] - Tref)) / np.max(np.abs(Tref)))
        res = ScalingResult(float(sigma), float(z_shift), kdiff, cdiff)
        out.append(
            CheckResult.compare(
                "scaling_invariance_kernel", kdiff, threshold, "<", inputs={"sigma": sigma, "z": z_shift, "W": W}
            )
        )
        out.append(
            CheckResult.compare(
                "scaling_invariance_corrector",
                res.corrector_difference,
                threshold,
                "<",
                inputs={"sigma": sigma, "z": z_shift, "W": W},
            )
        )
    return out
