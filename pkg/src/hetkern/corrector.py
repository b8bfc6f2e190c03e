"""Correctors T, T~, the flows X, Y and derived large-scale quantities.

``T`` solves ``-(a nu T')' + W T' = W nu`` with ``T(0) = 0`` and linear growth.
In flux form ``q = a nu T'`` satisfies the linear ODE ``q' = (W/(a nu)) q - W nu``
whose homogeneous mode grows to the right, so it is integrated right-to-left
from a frozen-coefficient fixed point placed beyond the grid (burn-in).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainTooSmall, NonConvergence, SingularMatrix
from .fields import SUBSAMPLES, CoefficientField, Grid, cell_average, face_harmonic
from .report import CheckResult


@dataclass(frozen=True)
class CorrectorSolution:
    grid: Grid
    T: np.ndarray
    Tprime: np.ndarray
    q: np.ndarray
    W: float
    route: str
    m_hat: float
    M_hat: float
    adjoint: bool = False

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def chi(self) -> np.ndarray:
        return self.T - self.grid.x

    def __call__(self, x) -> np.ndarray:
        """Piecewise-linear evaluation of T between nodes."""
        return np.interp(x, self.grid.x, self.T)

    def columns(self) -> dict[str, np.ndarray]:
        return {"x": self.x, "T": self.T, "Tprime": self.Tprime, "q": self.q, "chi": self.chi}


def burn_in_length(mu: float, W: float) -> float:
    return max(10.0 * mu**2 / W, 10.0)


def _extended_grid_x(grid: Grid, margin: float) -> np.ndarray:
    extra = int(np.ceil(margin / grid.h))
    m = grid.center
    return np.arange(-m, m + extra + 1) * grid.h


def _flux_sweep(a: CoefficientField, nu: CoefficientField, W: float, grid: Grid, burn_in: float, m: int):
    x = _extended_grid_x(grid, burn_in)
    h = grid.h
    dx = h / m
    pts = x[:-1, None] + dx * (np.arange(m) + 0.5)[None, :]
    k = a(pts) * nu(pts)
    nv = nu(pts)
    decay = np.exp(-W * dx / k)
    fixed = k * nv
    q = np.empty(len(x))
    q[-1] = fixed[-1, -1]
    for i in range(len(x) - 2, -1, -1):
        qi = q[i + 1]
        for j in range(m - 1, -1, -1):
            qi = fixed[i, j] + (qi - fixed[i, j]) * decay[i, j]
        q[i] = qi
    return q[: grid.n]


def solve_flux_profile(
    a: CoefficientField,
    nu: CoefficientField,
    W: float,
    grid: Grid,
    burn_in: float | None = None,
    m: int = SUBSAMPLES,
) -> np.ndarray:
    """Flux ``q = a nu T'`` at the grid nodes by backward exponential integration.

    Within each of the ``m`` sub-intervals of a grid interval the coefficients are
    frozen at the sub-interval midpoint and the linear ODE is propagated exactly.
    """
    if not W > 0:
        raise ValueError("solve_flux_profile needs W > 0; W = 0 is handled by convention in corrector()")
    mu = max(a.mu, nu.mu)
    if burn_in is None:
        burn_in = burn_in_length(mu, W)
    q = _flux_sweep(a, nu, W, grid, burn_in, m)
    lo, hi = mu**-3 / 2, 2 * mu**3
    if not np.all(np.isfinite(q)) or q.min() < lo or q.max() > hi:
        raise NonConvergence(f"flux left [{lo:g}, {hi:g}] after burn-in: range [{q.min():g}, {q.max():g}]")
    return q


def corrector_from_flux(
    q: np.ndarray, a: CoefficientField, nu: CoefficientField, grid: Grid, W: float, m: int = SUBSAMPLES
) -> CorrectorSolution:
    """Integrate ``T' = q/(a nu)`` with the face-harmonic midpoint rule, anchored at T(0) = 0."""
    kf = face_harmonic(a, grid, nu, m)
    inc = grid.h * 0.5 * (q[1:] + q[:-1]) / kf
    T = np.concatenate([[0.0], np.cumsum(inc)])
    T -= T[grid.center]
    Tp = q / (a(grid.x) * nu(grid.x))
    slopes = inc / grid.h
    return CorrectorSolution(
        grid=grid,
        T=T,
        Tprime=Tp,
        q=q,
        W=float(W),
        route="flux-quadrature",
        m_hat=float(min(Tp.min(), slopes.min())),
        M_hat=float(max(Tp.max(), slopes.max())),
    )


def _identity_corrector(a, nu, grid: Grid, route: str) -> CorrectorSolution:
    # W = 0 convention: T(x) = x
    x = grid.x
    return CorrectorSolution(grid, x.copy(), np.ones_like(x), a(x) * nu(x), 0.0, route, 1.0, 1.0)


def corrector(
    a: CoefficientField,
    nu: CoefficientField,
    W: float,
    grid: Grid,
    burn_in: float | None = None,
    m: int = SUBSAMPLES,
) -> CorrectorSolution:
    """Corrector T by the flux-quadrature route.

    ``W < 0`` is handled by reflection; ``W = 0`` returns ``T(x) = x`` by convention.
    """
    if W == 0:
        return _identity_corrector(a, nu, grid, "convention")
    if W < 0:
        s = corrector(a.reflected(), nu.reflected(), -W, grid, burn_in, m)
        return _reflect(s, W=W, adjoint=s.adjoint)
    q = solve_flux_profile(a, nu, W, grid, burn_in, m)
    return corrector_from_flux(q, a, nu, grid, W, m)


def _reflect(s: CorrectorSolution, W: float, adjoint: bool) -> CorrectorSolution:
    """x -> -x with T -> -T(-x); derivatives and fluxes are reversed."""
    return replace(s, T=-s.T[::-1], Tprime=s.Tprime[::-1].copy(), q=s.q[::-1].copy(), W=float(W), adjoint=adjoint)


def adjoint_corrector(
    a: CoefficientField,
    nu: CoefficientField,
    W: float,
    grid: Grid,
    burn_in: float | None = None,
    m: int = SUBSAMPLES,
) -> CorrectorSolution:
    """Adjoint corrector solving ``(a nu T~')' + W T~' = W nu`` via ``S(x) = -T~(-x)``."""
    if W == 0:
        return replace(_identity_corrector(a, nu, grid, "convention"), adjoint=True)
    s = corrector(a.reflected(), nu.reflected(), W, grid, burn_in, m)
    return _reflect(s, W=W, adjoint=True)


# --- Dirichlet-limit route -------------------------------------------------


def _dirichlet_solve(a, nu, W, x: np.ndarray, h: float, m: int) -> np.ndarray:
    """Zero-Dirichlet solve of -(a nu T')' + W T' = W nu on the nodes ``x`` (endpoints fixed)."""
    pts = x[:-1, None] + (h / m) * (np.arange(m) + 0.5)[None, :]
    kf = 1.0 / np.mean(1.0 / (a(pts) * nu(pts)), axis=1)
    off = ((np.arange(m) + 0.5) / m - 0.5) * h
    nv = np.mean(nu(x[1:-1, None] + off[None, :]), axis=1)
    kl, kr = kf[:-1], kf[1:]
    ab = np.zeros((3, len(x) - 2))
    ab[0, 1:] = -kr[:-1] / h**2 + W / (2 * h)
    ab[1, :] = (kl + kr) / h**2
    ab[2, :-1] = -kl[1:] / h**2 - W / (2 * h)
    try:
        inner = solve_banded((1, 1), ab, W * nv)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc
    return np.concatenate([[0.0], inner, [0.0]])


def solve_corrector_dirichlet(
    a: CoefficientField,
    nu: CoefficientField,
    W: float,
    R: float,
    h: float,
    mirror: bool = False,
    m: int = SUBSAMPLES,
) -> tuple[np.ndarray, np.ndarray]:
    """``T_R`` with ``T_R(0) = T_R(R) = 0`` on [0, R]; returns ``(x, T_R)``.

    With ``mirror=True`` the problem is posed on [-R, R] with zero data at both
    ends and re-anchored so that ``T_R(0) = 0``; this extends the construction to
    negative x, where the one-sided problem does not select the linear branch.
    """
    k = int(round(R / h))
    if k < 2 or abs(k * h - R) > 1e-9 * R:
        raise ValueError(f"R={R} must be a multiple of h={h}")
    x = np.arange(-k if mirror else 0, k + 1) * h
    if W == 0:
        return x, np.zeros_like(x)
    T = _dirichlet_solve(a, nu, W, x, h, m)
    if mirror:
        T = T - T[k]
    return x, T


def dirichlet_corrector(
    a: CoefficientField, nu: CoefficientField, W: float, grid: Grid, R: float, m: int = SUBSAMPLES
) -> CorrectorSolution:
    """Dirichlet-limit corrector sampled on ``grid`` (needs R >= grid.L)."""
    if R < grid.L:
        raise DomainTooSmall(f"R={R} smaller than grid half-width {grid.L}")
    xs, T = solve_corrector_dirichlet(a, nu, W, R, grid.h, mirror=True, m=m)
    off = int(round((R - grid.L) / grid.h))
    T = T[off : off + grid.n]
    slopes = np.diff(T) / grid.h
    Tp = np.gradient(T, grid.h)
    q = Tp * a(grid.x) * nu(grid.x)
    return CorrectorSolution(grid, T, Tp, q, float(W), "dirichlet-limit", float(slopes.min()), float(slopes.max()))


def dirichlet_monotonicity(a, nu, W: float, R_list, h: float, m: int = SUBSAMPLES) -> CheckResult:
    """``R -> T_R(x)`` is nondecreasing at every common interior node."""
    prev = None
    worst = 0.0
    for R in sorted(R_list):
        x, T = solve_corrector_dirichlet(a, nu, W, R, h, m=m)
        if prev is not None:
            n = len(prev)
            worst = min(worst, float(np.min(T[: n - 1] - prev[: n - 1])))
        prev = T
    return CheckResult.compare("dirichlet_monotone_in_R", worst, -1e-10, ">=", inputs={"W": W, "R": list(R_list), "h": h})


def route_agreement(flux: CorrectorSolution, a, nu, R: float, m: int = SUBSAMPLES) -> float:
    """Sup-relative difference between flux-route T and T_R on [0, R/2]."""
    h = flux.grid.h
    x, TR = solve_corrector_dirichlet(a, nu, flux.W, R, h, m=m)
    half = x <= R / 2 + 1e-12
    xs = x[half]
    Tf = flux(xs)
    return float(np.max(np.abs(Tf - TR[half])) / np.max(np.abs(Tf)))


def flux_residual(sol: CorrectorSolution, a, nu) -> float:
    """Max centred residual of ``-q' + W q/(a nu) - W nu`` over nodes with locally smooth coefficients."""
    x, h, q = sol.grid.x, sol.grid.h, sol.q
    k = a(x) * nu(x)
    res = -(q[2:] - q[:-2]) / (2 * h) + sol.W * q[1:-1] / k[1:-1] - sol.W * nu(x[1:-1])
    nv = nu(x)
    # q' jumps wherever nu does, even when a nu is continuous
    smooth = (np.abs(k[2:] - k[:-2]) < 0.1 * k[1:-1]) & (np.abs(nv[2:] - nv[:-2]) < 0.1 * nv[1:-1])
    if not smooth.any():
        return 0.0
    return float(np.max(np.abs(res[smooth])))


def canonical_residual(sol: CorrectorSolution, a, nu, m: int = SUBSAMPLES) -> float:
    """Max |nu f_t - (nu a f_x)_x + W f_x| of ``f = T - W t`` under the discrete stencil."""
    g = sol.grid
    h, T, W = g.h, sol.T, sol.W
    kf = face_harmonic(a, g, nu, m)
    nv = cell_average(nu, g, m)[1:-1]
    div = (kf[1:] * (T[2:] - T[1:-1]) - kf[:-1] * (T[1:-1] - T[:-2])) / h**2
    res = -W * nv - div + W * (T[2:] - T[:-2]) / (2 * h)
    return float(np.max(np.abs(res)))


# --- flows -----------------------------------------------------------------


@dataclass(frozen=True)
class FlowEvaluator:
    """Flow ``X(t; y)`` defined by ``T(X) - W t = T(y)`` on a sampled increasing T."""

    corrector: CorrectorSolution
    tol: float = 1e-12

    def __call__(self, t, y) -> np.ndarray:
        c = self.corrector
        target = np.asarray(c(y) + c.W * np.asarray(t, dtype=float), dtype=float)
        lo, hi = c.T[0], c.T[-1]
        if np.any(target < lo - self.tol) or np.any(target > hi + self.tol):
            raise DomainTooSmall("flow leaves the sampled range of T")
        # bracketing by binary search over nodes, then the secant (linear) step
        return np.interp(target, c.T, c.grid.x)


def flow(evaluator: FlowEvaluator, t, y) -> np.ndarray:
    return evaluator(t, y)


def flow_adjoint(evaluator: FlowEvaluator, t, y) -> np.ndarray:
    """Same as :func:`flow`; pass an evaluator built on the adjoint corrector."""
    return evaluator(t, y)


# --- effective diffusivity ---------------------------------------------------


@dataclass(frozen=True)
class EffectiveDiffusivity:
    x: np.ndarray
    running: np.ndarray
    value: float
    converged: bool


def effective_diffusivity(
    a: CoefficientField, nu: CoefficientField, sol: CorrectorSolution, x_max: float, m: int = SUBSAMPLES
) -> EffectiveDiffusivity:
    """Running averages ``(1/x) int_0^x nu a (T')^2`` at geometrically spaced x."""
    g = sol.grid
    if x_max > g.L:
        raise DomainTooSmall(f"x_max={x_max} beyond the grid half-width {g.L}")
    kf = face_harmonic(a, g, nu, m)
    qm = 0.5 * (sol.q[1:] + sol.q[:-1])
    dens = qm**2 / kf  # nu a T'^2 = q^2 / (nu a)
    c = g.center
    cum = np.concatenate([[0.0], np.cumsum(dens[c:] * g.h)])
    n_oct = max(int(np.floor(np.log2(x_max / g.h))) - 1, 1)
    xs = x_max / 2.0 ** np.arange(n_oct, -1, -1)
    idx = np.clip(np.round(xs / g.h).astype(int), 1, len(cum) - 1)
    xs = idx * g.h
    running = cum[idx] / xs
    conv = len(running) >= 2 and abs(running[-1] - running[-2]) <= 0.01 * abs(running[-1])
    return EffectiveDiffusivity(xs, running, float(running[-1]), bool(conv))


# --- invariant suite ---------------------------------------------------------


def corrector_invariant_suite(
    T: CorrectorSolution,
    Tt: CorrectorSolution,
    mu: float,
    n_samples: int = 10_000,
    seed: int = 0,
    tol: float = 1e-9,
) -> list[CheckResult]:
    """Bound, sandwich, comparison and flow checks on a corrector pair.

    Theoretical constants: ``m = mu^-5``, ``M = mu^5``, ``tau = 4 mu^7 / W``.
    """
    W = T.W
    m_th, M_th = mu**-5.0, mu**5.0
    out = []
    lo = min(T.m_hat, Tt.m_hat)
    hi = max(T.M_hat, Tt.M_hat)
    ok = lo >= m_th - tol and hi <= M_th + tol
    out.append(
        CheckResult(
            "corrector_slope_bounds",
            hi,
            M_th,
            bool(ok),
            "<=",
            inputs={"mu": mu, "W": W},
            details={"m_hat": T.m_hat, "M_hat": T.M_hat, "m_hat_adjoint": Tt.m_hat, "M_hat_adjoint": Tt.M_hat, "m": m_th},
        )
    )
    g = T.grid
    rng = np.random.default_rng(seed)
    X = FlowEvaluator(T)
    Y = FlowEvaluator(Tt)
    span = 0.25 * g.L
    y = rng.uniform(-span, span, n_samples)
    if W > 0:
        t = rng.uniform(0.0, span * T.m_hat / W, n_samples)
    else:
        t = rng.uniform(0.0, 1.0, n_samples)
    xs = rng.uniform(-span, span, n_samples)
    Xt = X(t, y)
    f_diff = np.abs(T(xs + Xt) - W * t - T(y))
    ax = np.abs(xs)
    nz = ax > 1e-9
    ratio = f_diff[nz] / ax[nz]
    out.append(
        CheckResult(
            "flow_sandwich",
            float(ratio.max()),
            M_th,
            bool(ratio.min() >= m_th - tol and ratio.max() <= M_th + tol),
            "<=",
            details={"min_ratio": float(ratio.min()), "max_ratio": float(ratio.max()), "m": m_th},
        )
    )
    if W > 0:
        tau = 4 * mu**7 / W
        gap = float(np.max(np.abs(T.T - Tt.T)))
        out.append(CheckResult.compare("corrector_adjoint_gap", gap, tau + tol, "<=", inputs={"tau": tau}))
        Yt = Y(t, y)
        xy = float(np.max(np.abs(Xt - Yt)))
        out.append(CheckResult.compare("flow_adjoint_gap", xy, 2 * tau / m_th + tol, "<="))
        F = np.abs(T(xs) - W * t - T(y))
        G = np.abs(Tt(xs) - W * t - Tt(y))
        c_emp = float(np.max(F / (G + np.sqrt(t) + 1e-300)))
        c_proof = max(M_th / m_th, 4 * M_th * mu**3.5 / m_th)
        out.append(CheckResult.compare("f_g_comparison_constant", c_emp, c_proof, "<=", details={"c_empirical": c_emp}))
    return out
