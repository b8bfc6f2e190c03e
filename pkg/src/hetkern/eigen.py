"""Generalized principal eigenfunctions of ``(a phi')' + (r - gamma) phi = 0``.

Eigenfunctions are carried only through the flux log-derivative
``w = a phi' / phi`` and ``ln phi`` (normalised by ``ln phi(0) = 0``); phi itself
underflows long before the grid ends.  Both are obtained from the linear system
``(phi, a phi')' = [[0, 1/a], [gamma - r, 0]] (phi, a phi')`` propagated with a
fourth-order Magnus step per sub-interval.  Every step has unit determinant, so
the Wronskian of two propagated solutions is conserved to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .corrector import CorrectorSolution, corrector
from .errors import DomainTooSmall, GammaBelowPrincipal, NonConvergence, NonPositiveWronskian
from .fields import SUBSAMPLES, CoefficientField, Grid, cell_average, face_harmonic, tabulate
from .report import CheckResult

_G = np.sqrt(3.0) / 6.0


@dataclass(frozen=True)
class EigenPair:
    gamma: float
    side: str  # "decay-right" (phi_gamma) or "decay-left" (phi~_gamma)
    grid: Grid
    w: np.ndarray
    lnphi: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.grid.x


@dataclass(frozen=True)
class SpectralSummary:
    gamma: float
    gamma_lower: float
    W_gamma: float
    wronskian_rel_std: float
    nu_gamma: np.ndarray
    T_gamma: np.ndarray
    epsilon_gap: float
    right: EigenPair
    left: EigenPair
    grid: Grid

    def columns(self) -> dict[str, np.ndarray]:
        return {
            "x": self.grid.x,
            "w_right": self.right.w,
            "w_left": self.left.w,
            "lnphi_right": self.right.lnphi,
            "lnphi_left": self.left.lnphi,
            "nu_gamma": self.nu_gamma,
            "T_gamma": self.T_gamma,
        }


# --- principal value -----------------------------------------------------------


def _dirichlet_operator(a: CoefficientField, r: CoefficientField, L: float, h: float, m: int = SUBSAMPLES):
    """Symmetric tridiagonal (diag, offdiag) of phi -> (a phi')' + r phi on the interior of [-L, L]."""
    g = Grid.from_spacing(L, h)
    kf = face_harmonic(a, g, None, m)
    rc = cell_average(r, g, m)[1:-1]
    diag = -(kf[:-1] + kf[1:]) / h**2 + rc
    off = kf[1:-1] / h**2
    return diag, off


def _count_below(diag: np.ndarray, off: np.ndarray, sigma: float) -> int:
    """Sturm count: number of eigenvalues < sigma."""
    d = diag[0] - sigma
    cnt = int(d < 0)
    o2 = off**2
    for i in range(1, len(diag)):
        if d == 0.0:
            d = 1e-300
        d = diag[i] - sigma - o2[i - 1] / d
        cnt += d < 0
    return cnt


def largest_eigenvalue(diag: np.ndarray, off: np.ndarray, tol: float = 1e-12, max_iter: int = 200) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of a symmetric tridiagonal matrix.

    A Sturm-count bisection isolates a shift just above the top eigenvalue,
    then shifted inverse power iteration converges in a handful of steps.
    """
    n = len(diag)
    lo = float(np.min(diag) - 2 * np.max(np.abs(off), initial=0.0))
    hi = float(np.max(diag) + 2 * np.max(np.abs(off), initial=0.0))
    # eigenvalues of (aphi')' + r phi are <= max r; tighten the upper end
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _count_below(diag, off, mid) == n:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-9 * max(1.0, abs(hi)):
            break
    shift = hi + 1e-9 * max(1.0, abs(hi))
    ab = np.zeros((3, n))
    ab[0, 1:] = -off
    ab[1] = shift - diag
    ab[2, :-1] = -off
    v = np.ones(n) / np.sqrt(n)
    lam_old = np.inf
    for _ in range(max_iter):
        v = solve_banded((1, 1), ab, v)
        v /= np.linalg.norm(v)
        Av = diag * v
        Av[:-1] += off * v[1:]
        Av[1:] += off * v[:-1]
        lam = float(v @ Av)
        if abs(lam - lam_old) <= tol * max(1.0, abs(lam)):
            if v.sum() < 0:
                v = -v
            return lam, v
        lam_old = lam
    raise NonConvergence("inverse power iteration did not converge")


def principal_value_estimate(a: CoefficientField, r: CoefficientField, L_list, h: float) -> list[float]:
    """Largest Dirichlet eigenvalue on [-L, L] for each L; increases to the threshold gamma_lower."""
    out = []
    for L in L_list:
        diag, off = _dirichlet_operator(a, r, L, h)
        out.append(largest_eigenvalue(diag, off)[0])
    return out


# --- Magnus propagation ----------------------------------------------------------


def _cosh_sinhc(s: np.ndarray):
    """cosh(sqrt(s)) and sinh(sqrt(s))/sqrt(s), continued to s < 0."""
    c = np.empty_like(s)
    sc = np.empty_like(s)
    pos = s > 1e-8
    neg = s < -1e-8
    mid = ~(pos | neg)
    rt = np.sqrt(s[pos])
    c[pos] = np.cosh(rt)
    sc[pos] = np.sinh(rt) / rt
    rt = np.sqrt(-s[neg])
    c[neg] = np.cos(rt)
    sc[neg] = np.sin(rt) / rt
    sm = s[mid]
    c[mid] = 1 + sm / 2 + sm**2 / 24
    sc[mid] = 1 + sm / 6 + sm**2 / 120
    return c, sc


def _interval_propagators(a, r, gamma: float, x: np.ndarray, m: int) -> np.ndarray:
    """2x2 propagators over [x_i, x_{i+1}], shape (len(x)-1, 2, 2)."""
    h = x[1] - x[0]
    d = h / m
    starts = x[:-1, None] + d * np.arange(m)[None, :]
    p1 = starts + d * (0.5 - _G)
    p2 = starts + d * (0.5 + _G)
    b1, b2 = 1.0 / a(p1), 1.0 / a(p2)
    c1, c2 = gamma - r(p1), gamma - r(p2)
    alpha = (np.sqrt(3.0) * d**2 / 12.0) * (b2 * c1 - b1 * c2)
    beta = 0.5 * d * (b1 + b2)
    kappa = 0.5 * d * (c1 + c2)
    ch, shc = _cosh_sinhc(alpha**2 + beta * kappa)
    E = np.empty(starts.shape + (2, 2))
    E[..., 0, 0] = ch + shc * alpha
    E[..., 0, 1] = shc * beta
    E[..., 1, 0] = shc * kappa
    E[..., 1, 1] = ch - shc * alpha
    P = E[:, 0]
    for j in range(1, m):
        P = np.einsum("nij,njk->nik", E[:, j], P)
    return P


def _burn_in(a: CoefficientField, r: CoefficientField, gamma: float) -> float:
    mu = a.mu
    rate = np.sqrt(max(gamma - r.value_range()[1], 0.0) / mu)
    if rate <= 0:
        # gamma below sup r: use the mean-field rate of a wide window instead
        xs = np.linspace(-50, 50, 20001)
        rate = np.sqrt(max(gamma - float(np.mean(r(xs))), 1e-6) / mu)
    return min(20.0 / rate, 400.0)


def solve_eigenfunction(
    a: CoefficientField,
    r: CoefficientField,
    gamma: float,
    side: str,
    grid: Grid,
    burn_in: float | None = None,
    m: int = SUBSAMPLES,
) -> EigenPair:
    """Positive solution decaying on ``side`` ("decay-right": x -> +inf, "decay-left": x -> -inf)."""
    if side not in ("decay-right", "decay-left"):
        raise ValueError(f"unknown side {side!r}")
    if burn_in is None:
        burn_in = _burn_in(a, r, gamma)
    h = grid.h
    extra = int(np.ceil(burn_in / h))
    c = grid.center
    if extra > 200 * grid.n:
        raise DomainTooSmall(f"burn-in {burn_in:g} is too long for the grid")
    right = side == "decay-right"
    idx = np.arange(-c, c + extra + 1) if right else np.arange(-c - extra, c + 1)
    x = idx * h
    P = _interval_propagators(a, r, gamma, x, m)
    far = x[-extra:] if right else x[:extra]
    c0 = max(gamma - float(np.mean(r(far))), 1e-12)
    w0 = np.sqrt(float(np.mean(a(far))) * c0)
    w = np.empty(len(x))
    P11, P12, P21, P22 = P[:, 0, 0], P[:, 0, 1], P[:, 1, 0], P[:, 1, 1]
    if right:
        w[-1] = -w0
        for i in range(len(x) - 2, -1, -1):
            den = P22[i] - P12[i] * w[i + 1]
            if not den > 0:
                raise GammaBelowPrincipal(f"phi changes sign at x={x[i]:g}: gamma={gamma:g} not above the threshold")
            w[i] = (P11[i] * w[i + 1] - P21[i]) / den
        sl = slice(0, grid.n)
    else:
        w[0] = w0
        for i in range(len(x) - 1):
            den = P11[i] + P12[i] * w[i]
            if not den > 0:
                raise GammaBelowPrincipal(f"phi~ changes sign at x={x[i]:g}: gamma={gamma:g} not above the threshold")
            w[i + 1] = (P21[i] + P22[i] * w[i]) / den
        sl = slice(extra, extra + grid.n)
    ww = w[sl]
    Pg = P[sl.start : sl.start + grid.n - 1]
    growth = Pg[:, 0, 0] + Pg[:, 0, 1] * ww[:-1]
    if not np.all(growth > 0) or not np.all(np.isfinite(ww)):
        raise GammaBelowPrincipal(f"Riccati branch lost for gamma={gamma:g}")
    lnphi = np.concatenate([[0.0], np.cumsum(np.log(growth))])
    lnphi -= lnphi[grid.center]
    bound = np.sqrt(max(gamma - r.value_range()[0], 0.0) / (1.0 / a.mu)) if a.mu else np.inf
    if np.max(np.abs(ww / a(grid.x))) > 2 * bound + 1.0:
        raise GammaBelowPrincipal("log-derivative blew up during integration")
    return EigenPair(float(gamma), side, grid, ww, lnphi)


def riccati_residual(pair: EigenPair, a: CoefficientField, r: CoefficientField) -> np.ndarray:
    """``w' + w^2/a + r - gamma`` with a sixth-order centred derivative (interior nodes)."""
    w, h, x = pair.w, pair.grid.h, pair.grid.x
    coef = np.array([-1, 9, -45, 0, 45, -9, 1]) / (60 * h)
    dw = np.convolve(w, coef[::-1], mode="valid")
    xi = x[3:-3]
    return dw + w[3:-3] ** 2 / a(xi) + r(xi) - pair.gamma


def wronskian(right: EigenPair, left: EigenPair) -> tuple[float, float]:
    """Mean and relative standard deviation of ``nu (w~ - w)``, ``nu = exp(lnphi + lnphi~)``."""
    if right.gamma != left.gamma or right.grid != left.grid:
        raise ValueError("eigenpairs must share gamma and grid")
    Wx = np.exp(right.lnphi + left.lnphi) * (left.w - right.w)
    if Wx.min() <= 0:
        raise NonPositiveWronskian(f"Wronskian reaches {Wx.min():g}")
    mean = float(Wx.mean())
    return mean, float(Wx.std() / mean)


def invariant_measure(right: EigenPair, left: EigenPair) -> np.ndarray:
    return np.exp(right.lnphi + left.lnphi)


def epsilon_gap(right: EigenPair, left: EigenPair, a: CoefficientField) -> float:
    """inf of ``phi~'/phi~ - phi'/phi = (w~ - w)/a``."""
    return float(np.min((left.w - right.w) / a(right.grid.x)))


def _lnphi(a, r, gamma, grid, m):
    return solve_eigenfunction(a, r, gamma, "decay-right", grid, m=m).lnphi


@dataclass(frozen=True)
class PhiDot:
    ratio: np.ndarray  # phi_dot / phi
    T_gamma: np.ndarray
    W_gamma: float
    error_estimate: float


def phi_dot(
    a: CoefficientField,
    r: CoefficientField,
    gamma: float,
    dgamma: float,
    grid: Grid,
    W_gamma: float | None = None,
    m: int = SUBSAMPLES,
) -> PhiDot:
    """``phi_dot/phi`` by central differences of ln phi in gamma, with one Richardson step."""

    def central(d):
        return (_lnphi(a, r, gamma + d, grid, m) - _lnphi(a, r, gamma - d, grid, m)) / (2 * d)

    D1 = central(dgamma)
    D2 = central(dgamma / 2)
    ratio = (4 * D2 - D1) / 3
    err = float(np.max(np.abs(D2 - D1)))
    if W_gamma is None:
        right = solve_eigenfunction(a, r, gamma, "decay-right", grid, m=m)
        left = solve_eigenfunction(a, r, gamma, "decay-left", grid, m=m)
        W_gamma = wronskian(right, left)[0]
    return PhiDot(ratio, -W_gamma * ratio, float(W_gamma), err)


def default_dgamma(gamma: float, gamma_lower: float) -> float:
    return 1e-3 * (gamma - gamma_lower)


def spectral_summary(
    a: CoefficientField,
    r: CoefficientField,
    gamma: float,
    grid: Grid,
    gamma_lower: float | None = None,
    margin: float = 1e-2,
    m: int = SUBSAMPLES,
) -> SpectralSummary:
    """All spectral objects at ``gamma`` on ``grid``."""
    if gamma_lower is None:
        gamma_lower = principal_value_estimate(a, r, [grid.L], grid.h)[0]
    if gamma < gamma_lower + margin:
        raise GammaBelowPrincipal(f"gamma={gamma:g} below threshold estimate {gamma_lower:g} + {margin:g}")
    right = solve_eigenfunction(a, r, gamma, "decay-right", grid, m=m)
    left = solve_eigenfunction(a, r, gamma, "decay-left", grid, m=m)
    Wg, rel = wronskian(right, left)
    nu = invariant_measure(right, left)
    pd = phi_dot(a, r, gamma, default_dgamma(gamma, gamma_lower), grid, W_gamma=Wg, m=m)
    return SpectralSummary(
        gamma=float(gamma),
        gamma_lower=float(gamma_lower),
        W_gamma=Wg,
        wronskian_rel_std=rel,
        nu_gamma=nu,
        T_gamma=pd.T_gamma,
        epsilon_gap=epsilon_gap(right, left, a),
        right=right,
        left=left,
        grid=grid,
    )


def nu_field(summary: SpectralSummary) -> CoefficientField:
    """Invariant measure as a piecewise-constant tabulated field."""
    nu = summary.nu_gamma
    mu = max(float(nu.max()), 1.0 / float(nu.min()))
    return tabulate(nu, summary.grid, mu)


def induced_corrector(a: CoefficientField, summary: SpectralSummary, grid: Grid, nu_scale: float = 1.0) -> CorrectorSolution:
    """Corrector of the canonical problem (a, nu_gamma, W_gamma) on ``grid``.

    ``summary`` must live on a grid wider than ``grid`` by the corrector burn-in.
    """
    nu = nu_field(summary)
    if nu_scale != 1.0:
        nu = nu.scaled(nu_scale)
    mu = max(a.mu, nu.mu * max(nu_scale, 1 / nu_scale))
    margin = summary.grid.L - grid.L
    burn = max(10.0 * mu**2 / summary.W_gamma, 10.0)
    if margin < burn:
        raise DomainTooSmall(f"spectral grid margin {margin:g} shorter than corrector burn-in {burn:g}")
    return corrector(a, nu, summary.W_gamma, grid, burn_in=burn)


def corrector_identification_check(
    T_gamma_spectral: np.ndarray, induced: CorrectorSolution, threshold: float = 1e-3, name: str = "corrector_identification"
) -> CheckResult:
    """Sup-relative difference between the spectral T_gamma and the corrector route."""
    diff = float(np.max(np.abs(T_gamma_spectral - induced.T)) / np.max(np.abs(induced.T)))
    return CheckResult.compare(name, diff, threshold, "<", inputs={"W_gamma": induced.W})


def convexity_check(
    a: CoefficientField,
    r: CoefficientField,
    gammas: tuple[float, float],
    sigma: float,
    grid: Grid,
    tol: float = 1e-8,
    m: int = SUBSAMPLES,
) -> CheckResult:
    """``ln phi_{(1-s)g + s g'} <= (1-s) ln phi_g + s ln phi_g'`` on x >= 0, and the log-derivative form at 0."""
    g0, g1 = gammas
    gm = (1 - sigma) * g0 + sigma * g1
    p0 = solve_eigenfunction(a, r, g0, "decay-right", grid, m=m)
    p1 = solve_eigenfunction(a, r, g1, "decay-right", grid, m=m)
    pm = solve_eigenfunction(a, r, gm, "decay-right", grid, m=m)
    pos = grid.x >= 0
    excess = pm.lnphi[pos] - ((1 - sigma) * p0.lnphi[pos] + sigma * p1.lnphi[pos])
    c = grid.center
    a0 = float(a(np.array([0.0]))[0])
    dexcess = (pm.w[c] - ((1 - sigma) * p0.w[c] + sigma * p1.w[c])) / a0
    worst = float(max(excess.max(), dexcess))
    return CheckResult.compare(
        "eigen_convexity", worst, tol, "<=", inputs={"gammas": [g0, gm, g1], "sigma": sigma}, details={"log_derivative_excess_at_0": dexcess}
    )


def _restrict_pair(p: EigenPair, grid: Grid, sl: slice) -> EigenPair:
    return EigenPair(p.gamma, p.side, grid, p.w[sl].copy(), p.lnphi[sl].copy())


def restrict_summary(summary: SpectralSummary, grid: Grid) -> SpectralSummary:
    """Summary sampled on a centred sub-grid with the same spacing (ln phi stays anchored at 0)."""
    big = summary.grid
    if abs(big.h - grid.h) > 1e-12 * big.h or grid.L > big.L + 1e-12:
        raise DomainTooSmall("restriction needs a centred sub-grid with equal spacing")
    off = big.center - grid.center
    sl = slice(off, off + grid.n)
    right = _restrict_pair(summary.right, grid, sl)
    left = _restrict_pair(summary.left, grid, sl)
    Wg, rel = wronskian(right, left)
    return SpectralSummary(
        gamma=summary.gamma,
        gamma_lower=summary.gamma_lower,
        W_gamma=summary.W_gamma,
        wronskian_rel_std=rel,
        nu_gamma=summary.nu_gamma[sl].copy(),
        T_gamma=summary.T_gamma[sl].copy(),
        epsilon_gap=summary.epsilon_gap,
        right=right,
        left=left,
        grid=grid,
    )
