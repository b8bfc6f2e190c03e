"""Conservative Crank–Nicolson solver and the kernels built on it.

The canonical equation ``nu p_t = (nu a p_x)_x - W p_x`` is integrated over control
volumes centred at the nodes.  With ``F = k p_x - W p`` on the faces (``k`` the
harmonic mean of ``nu a``) the semi-discrete system reads ``M p' = K p`` with
``M = diag(nu_i h)``.  The drift flux is centred, blended toward upwind on faces
whose cell Péclet number exceeds 2.  Boundary nodes carry zero Dirichlet data.

A useful exact property: ``K`` assembled with ``-W`` is the transpose of ``K``
assembled with ``W``, so forward and adjoint discrete kernels are related by
``P(t, x_i, y_j) = P_hat(t, y_j, x_i)`` to round-off.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.linalg import solve_banded

from .corrector import CorrectorSolution, adjoint_corrector, corrector
from .errors import CFLAdvisory, DomainTooSmall, EmptyTrustRegion, InvalidSpec, SingularMatrix, UnresolvedDelta
from .fields import SUBSAMPLES, CoefficientField, Grid, ProblemSpec, cell_average, face_harmonic, make_field, tabulate
from .report import CheckResult

CACHE_FORMAT = "hetkern-kernel"
CACHE_VERSION = 1
RAMP_STEPS = 50
MIN_RELIABLE_STEPS = 10
CONTAMINATION = 1e-6


# --- operator ----------------------------------------------------------------


@dataclass(frozen=True)
class Operator:
    """Tridiagonal ``K`` (full node range) and lumped weights ``M`` of ``M p' = K p``."""

    grid: Grid
    weight: np.ndarray  # M diagonal, nu_i h
    lower: np.ndarray  # K[i, i-1], index i
    diag: np.ndarray
    upper: np.ndarray  # K[i, i+1], index i
    kf: np.ndarray
    cl: np.ndarray  # drift weights of the left / right node on each face
    cr: np.ndarray
    W: float
    blended_fraction: float

    def apply(self, p: np.ndarray) -> np.ndarray:
        out = self.diag * p
        out[1:] += self.lower[1:] * p[:-1]
        out[:-1] += self.upper[:-1] * p[1:]
        return out

    def face_flux(self, p: np.ndarray, face: int) -> float:
        """``F = k p_x - W p_face`` on face ``face`` (between nodes face, face+1)."""
        h = self.grid.h
        return float(self.kf[face] * (p[face + 1] - p[face]) / h - self.W * (self.cl[face] * p[face] + self.cr[face] * p[face + 1]))


def assemble(kf: np.ndarray, weight: np.ndarray, W: float, grid: Grid, potential: np.ndarray | None = None) -> Operator:
    h = grid.h
    pe = abs(W) * h / kf
    theta = np.where(pe > 2.0, 1.0 - 2.0 / np.maximum(pe, 2.0), 0.0)
    s = np.sign(W)
    cl = 0.5 + 0.5 * theta * s
    cr = 0.5 - 0.5 * theta * s
    n = grid.n
    lower = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    # face f joins nodes f and f+1; contributes F_f to row f (as +F_{i+1/2}) and -F_f to row f+1
    upper[:-1] += kf / h - W * cr
    diag[:-1] += -kf / h - W * cl
    diag[1:] += -kf / h + W * cr
    lower[1:] += kf / h + W * cl
    if potential is not None:
        diag += potential * h
    frac = float(np.mean(theta > 0))
    if frac > 0.1:
        warnings.warn(f"upwind blending active on {100 * frac:.0f}% of faces (cell Peclet > 2)", CFLAdvisory, stacklevel=3)
    return Operator(grid, weight, lower, diag, upper, kf, cl, cr, float(W), frac)


def canonical_operator(a: CoefficientField, nu: CoefficientField, W: float, grid: Grid, m: int = SUBSAMPLES) -> Operator:
    kf = face_harmonic(a, grid, nu, m)
    nv = cell_average(nu, grid, m)
    return assemble(kf, nv * grid.h, W, grid)


def original_operator(a: CoefficientField, r: CoefficientField, grid: Grid, m: int = SUBSAMPLES) -> Operator:
    """``u_t = (a u_x)_x + r u`` in the same conservative form (weight 1, no drift)."""
    kf = face_harmonic(a, grid, None, m)
    return assemble(kf, np.full(grid.n, grid.h), 0.0, grid, potential=cell_average(r, grid, m))


def operator_for(problem: ProblemSpec, m: int = SUBSAMPLES) -> Operator:
    if problem.canonical:
        return canonical_operator(problem.a, problem.nu, problem.W, problem.grid, m)
    return original_operator(problem.a, problem.r, problem.grid, m)


# --- stepping ------------------------------------------------------------------


@dataclass
class KernelState:
    t: float
    p: np.ndarray
    boundary_flux: float = 0.0
    steps: int = 0


class _Stepper:
    """Crank–Nicolson steps with the banded left-hand side cached per dt."""

    def __init__(self, op: Operator):
        self.op = op
        self._lhs: dict[float, np.ndarray] = {}

    def _banded(self, dt: float) -> np.ndarray:
        ab = self._lhs.get(dt)
        if ab is None:
            op = self.op
            ab = np.zeros((3, op.grid.n - 2))
            ab[0, 1:] = -0.5 * dt * op.upper[1:-2]
            ab[1] = op.weight[1:-1] - 0.5 * dt * op.diag[1:-1]
            ab[2, :-1] = -0.5 * dt * op.lower[2:-1]
            self._lhs[dt] = ab
        return ab

    def step(self, state: KernelState, dt: float) -> KernelState:
        op = self.op
        p = state.p
        Kp = op.apply(p)
        rhs = (op.weight * p + 0.5 * dt * Kp)[1:-1]
        try:
            inner = solve_banded((1, 1), self._banded(dt), rhs, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix(str(exc)) from exc
        new = np.zeros_like(p)
        new[1:-1] = inner
        last = op.grid.n - 2
        out_old = op.face_flux(p, 0) - op.face_flux(p, last)
        out_new = op.face_flux(new, 0) - op.face_flux(new, last)
        absorbed = 0.5 * dt * (out_old + out_new)
        return KernelState(state.t + dt, new, state.boundary_flux + absorbed, state.steps + 1)


def step_canonical(state: KernelState, dt: float, problem: ProblemSpec | Operator) -> KernelState:
    """One Crank–Nicolson step of the conservative scheme."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    op = problem if isinstance(problem, Operator) else operator_for(problem)
    return _Stepper(op).step(state, dt)


def time_steps(h: float, t_out: Sequence[float], ramp: int = RAMP_STEPS):
    """Yield ``(dt, output_index or None)``: h^2/4 for ``ramp`` steps, then h/4, landing on output times."""
    t = 0.0
    k = 0
    for j, target in enumerate(t_out):
        eps = 1e-12 * max(1.0, target)
        if target <= t + eps:
            yield 0.0, j
            continue
        while True:
            dt = h * h / 4 if k < ramp else h / 4
            k += 1
            if t + dt >= target - eps:
                dt, t = target - t, target
                yield dt, j
                break
            t += dt
            yield dt, None


# --- tables ----------------------------------------------------------------------


@dataclass(frozen=True)
class KernelTable:
    """Kernel columns ``P(t_k, x_i, y)`` with mass and absorbed-mass bookkeeping."""

    y: float
    times: np.ndarray
    values: np.ndarray
    mass: np.ndarray
    boundary_flux: np.ndarray
    steps: np.ndarray
    grid: Grid
    weight: np.ndarray  # nu at nodes (1 for the original equation)
    mu: float
    problem: ProblemSpec | None = None
    kind: str = "canonical"
    route: str = "direct"
    meta: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def contaminated(self) -> np.ndarray:
        return self.boundary_flux > CONTAMINATION

    @property
    def reliable(self) -> np.ndarray:
        return self.steps >= MIN_RELIABLE_STEPS

    def trust_mask(self, k: int) -> np.ndarray:
        """Nodes trusted at output ``k``: away from the boundary layer, before contamination."""
        t = self.times[k]
        if self.contaminated[k] or not self.reliable[k]:
            return np.zeros(self.grid.n, dtype=bool)
        return np.abs(self.x) <= self.grid.L - 5.0 * np.sqrt(t * self.mu)

    def trusted(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Flattened ``(t, x, value, node index)`` over all trusted points."""
        ts, xs, vs, idx = [], [], [], []
        for k in range(len(self.times)):
            mk = self.trust_mask(k)
            if mk.any():
                ii = np.nonzero(mk)[0]
                ts.append(np.full(len(ii), self.times[k]))
                xs.append(self.x[ii])
                vs.append(self.values[k, ii])
                idx.append(ii)
        if not ts:
            raise EmptyTrustRegion("no trusted kernel values")
        return np.concatenate(ts), np.concatenate(xs), np.concatenate(vs), np.concatenate(idx)

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, t):
            raise KeyError(f"time {t} not an output time")
        return self.values[k]

    def clipped(self) -> np.ndarray:
        return np.maximum(self.values, 0.0)

    def columns(self) -> dict[str, np.ndarray]:
        """Long format: one row per (t, x)."""
        nt, n = self.values.shape
        return {
            "t": np.repeat(self.times, n),
            "x": np.tile(self.x, nt),
            "value": self.clipped().ravel(),
            "mass": np.repeat(self.mass, n),
        }

    # cache -----------------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "format": CACHE_FORMAT,
            "version": CACHE_VERSION,
            "y": self.y,
            "L": self.grid.L,
            "n": self.grid.n,
            "mu": self.mu,
            "kind": self.kind,
            "route": self.route,
            "meta": self.meta,
            "problem": _problem_dict(self.problem),
        }
        np.savez_compressed(
            path,
            header=np.array(json.dumps(header, sort_keys=True)),
            times=self.times,
            values=self.values,
            mass=self.mass,
            boundary_flux=self.boundary_flux,
            steps=self.steps,
            weight=self.weight,
        )

    @classmethod
    def load(cls, path) -> "KernelTable":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != CACHE_FORMAT or header.get("version") != CACHE_VERSION:
                raise InvalidSpec(f"unsupported kernel cache header {header.get('format')}/{header.get('version')}")
            grid = Grid(header["L"], header["n"])
            return cls(
                y=header["y"],
                times=z["times"],
                values=z["values"],
                mass=z["mass"],
                boundary_flux=z["boundary_flux"],
                steps=z["steps"],
                grid=grid,
                weight=z["weight"],
                mu=header["mu"],
                problem=_problem_from(header["problem"], grid),
                kind=header["kind"],
                route=header["route"],
                meta=header["meta"],
            )


def _problem_dict(p: ProblemSpec | None):
    if p is None:
        return None
    d = {"a": p.a.to_dict()}
    if p.canonical:
        d.update(nu=p.nu.to_dict(), W=p.W)
    else:
        d.update(r=p.r.to_dict(), gamma=p.gamma)
    return d


def _problem_from(d, grid: Grid) -> ProblemSpec | None:
    if d is None:
        return None
    a = make_field(d["a"], validate=False)
    if "W" in d:
        return ProblemSpec(a, grid, nu=make_field(d["nu"], validate=False), W=d["W"])
    return ProblemSpec(a, grid, r=make_field(d["r"], "potential", validate=False), gamma=d["gamma"])


# --- kernels -----------------------------------------------------------------------


def _evolve(op: Operator, p0: np.ndarray, t_grid, mask_fn=None, record_all: bool = False):
    """Advance ``p0`` to each output time; optional node masking after every step."""
    t_out = np.asarray(sorted(float(t) for t in t_grid))
    if np.any(t_out < 0):
        raise ValueError("output times must be >= 0")
    stepper = _Stepper(op)
    state = KernelState(0.0, p0.astype(float).copy())
    vals = np.zeros((len(t_out), op.grid.n))
    mass = np.zeros(len(t_out))
    flux = np.zeros(len(t_out))
    steps = np.zeros(len(t_out), dtype=int)
    history = [(0.0, state.p.copy())] if record_all else None
    for dt, j in time_steps(op.grid.h, t_out):
        if dt > 0:
            state = stepper.step(state, dt)
            if mask_fn is not None:
                keep = mask_fn(state.t)
                killed = float(np.sum(op.weight[~keep] * state.p[~keep]))
                state.p[~keep] = 0.0
                state.boundary_flux += killed
            if record_all:
                history.append((state.t, state.p.copy()))
        if j is not None:
            vals[j] = state.p
            mass[j] = float(op.weight @ state.p)
            flux[j] = state.boundary_flux
            steps[j] = state.steps
    return t_out, vals, mass, flux, steps, history


def _delta(op: Operator, j: int) -> np.ndarray:
    p0 = np.zeros(op.grid.n)
    p0[j] = 1.0 / op.weight[j]
    return p0


def heat_kernel(problem: ProblemSpec, y: float, t_grid, m: int = SUBSAMPLES) -> KernelTable:
    """Fundamental solution with datum ``delta_y / nu(y)`` (unit discrete nu-mass).

    For an original problem (``gamma`` set) this is route A of the original kernel:
    datum ``delta_y`` for ``u_t = (a u_x)_x + r u``.
    """
    g = problem.grid
    j = g.index(y)
    if j in (0, g.n - 1):
        raise DomainTooSmall("source on the boundary")
    op = operator_for(problem, m)
    t_out, vals, mass, flux, steps, _ = _evolve(op, _delta(op, j), t_grid)
    if problem.canonical and np.any(flux > CONTAMINATION):
        warnings.warn("boundary contamination: absorbed mass exceeds 1e-6; trust region shrinks", RuntimeWarning, stacklevel=2)
    return KernelTable(
        y=float(g.x[j]),
        times=t_out,
        values=vals,
        mass=mass,
        boundary_flux=flux,
        steps=steps,
        grid=g,
        weight=op.weight / g.h,
        mu=problem.mu,
        problem=problem,
        kind="canonical" if problem.canonical else "original",
        route="direct",
    )


def adjoint_problem(problem: ProblemSpec) -> ProblemSpec:
    return problem.with_W(-problem.W)


@dataclass(frozen=True)
class OriginalKernel:
    route_a: KernelTable
    route_b: KernelTable
    sup_relative_difference: float
    trusted_fraction: float


def heat_kernel_original(
    a: CoefficientField,
    r: CoefficientField,
    gamma: float,
    y: float,
    t_grid,
    grid: Grid,
    summary=None,
    m: int = SUBSAMPLES,
) -> OriginalKernel:
    """Original-equation kernel ``U`` by direct solve (A) and by the ground-state transform (B).

    Route B evaluates ``U(t,x,y) = nu_gamma(y) P(t,x,y) phi(x)/phi(y) e^{gamma t}``;
    the ``nu_gamma(y)`` factor comes from the ``delta_y/nu`` datum of ``P``.
    """
    from . import eigen

    if summary is None:
        summary = eigen.spectral_summary(a, r, gamma, grid, m=m)
    if summary.grid != grid or summary.gamma != gamma:
        raise InvalidSpec("spectral summary must share the grid and gamma")
    orig = ProblemSpec(a, grid, r=r, gamma=gamma)
    UA = heat_kernel(orig, y, t_grid, m)
    nu = eigen.nu_field(summary)
    canon = ProblemSpec(a, grid, nu=nu, W=summary.W_gamma)
    P = heat_kernel(canon, y, t_grid, m)
    j = grid.index(y)
    lnphi = summary.right.lnphi
    factor = summary.nu_gamma[j] * np.exp(lnphi[None, :] - lnphi[j] + gamma * P.times[:, None])
    UB = replace(P, values=P.values * factor, kind="original", route="ground-state", mu=max(P.mu, a.mu, r.mu))
    UA = replace(UA, boundary_flux=P.boundary_flux, mu=UB.mu)
    diff, frac = _sup_rel_trusted(UA, UB)
    return OriginalKernel(UA, UB, diff, frac)


def _sup_rel_trusted(A: KernelTable, B: KernelTable) -> tuple[float, float]:
    num = den = 0.0
    count = 0
    for k in range(len(A.times)):
        mk = A.trust_mask(k) & B.trust_mask(k)
        if mk.any():
            count += int(mk.sum())
            num = max(num, float(np.max(np.abs(A.values[k, mk] - B.values[k, mk]))))
            den = max(den, float(np.max(np.abs(B.values[k, mk]))))
    if count == 0:
        raise EmptyTrustRegion("routes share no trusted points")
    return num / den, count / A.values.size


@dataclass(frozen=True)
class TubeSpec:
    xi: float
    R: float
    s: float = 0.0

    def __post_init__(self):
        if not self.R > 0:
            raise InvalidSpec("tube half-width R must be positive")


def tube_mask(T: CorrectorSolution, tube: TubeSpec, t: float, W: float) -> np.ndarray:
    """Nodes strictly inside ``|T(x) - T(xi) - W t| < R``."""
    return np.abs(T.T - T(tube.xi) - W * t) < tube.R


def killed_kernel(
    problem: ProblemSpec,
    tube: TubeSpec,
    y: float,
    t_grid,
    T: CorrectorSolution | None = None,
    m: int = SUBSAMPLES,
) -> KernelTable:
    """Kernel absorbed on the moving tube boundary, started at time ``s``.

    ``t_grid`` are absolute times ``>= s``; values outside the tube are zeroed
    after every step (node masking), and the absorbed mass is booked as flux.
    """
    if not problem.canonical:
        raise InvalidSpec("killed kernels are defined for canonical problems")
    g = problem.grid
    if T is None:
        T = corrector(problem.a, problem.nu, problem.W, g, m=m)
    W = problem.W
    j = g.index(y)
    if not tube_mask(T, tube, tube.s, W)[j]:
        raise InvalidSpec("source outside the tube at the start time")
    op = operator_for(problem, m)

    def keep(tau):
        mk = tube_mask(T, tube, tube.s + tau, W)
        if mk[0] or mk[1] or mk[-1] or mk[-2]:
            raise DomainTooSmall("tube reaches the grid boundary")
        return mk

    rel = np.asarray(t_grid, float) - tube.s
    if np.any(rel < 0):
        raise ValueError("killed-kernel times must be >= s")
    p0 = _delta(op, j) * keep(0.0)
    t_out, vals, mass, flux, steps, _ = _evolve(op, p0, rel, mask_fn=keep)
    return KernelTable(
        y=float(g.x[j]),
        times=t_out + tube.s,
        values=vals,
        mass=mass,
        boundary_flux=np.zeros_like(flux),
        steps=steps,
        grid=g,
        weight=op.weight / g.h,
        mu=problem.mu,
        problem=problem,
        kind="killed",
        route="direct",
        meta={"tube": {"xi": tube.xi, "R": tube.R, "s": tube.s}, "absorbed": flux.tolist()},
    )


# --- checks --------------------------------------------------------------------------


def positivity_check(table: KernelTable, floor: float = -1e-12) -> CheckResult:
    vmin = float(table.values.min())
    return CheckResult.compare("kernel_positivity", vmin, floor, ">=", inputs={"y": table.y, "kind": table.kind})


def conservation_check(table: KernelTable, tol: float = 1e-6) -> CheckResult:
    err = float(np.max(np.abs(table.mass + table.boundary_flux - 1.0)))
    return CheckResult.compare("kernel_conservation", err, tol, "<=", inputs={"y": table.y})


def duality_check(problem: ProblemSpec, t: float, x, y: float, threshold: float = 1e-2) -> CheckResult:
    """``P(t, x, y)`` from the forward solve vs ``P_hat(t, y, x)`` from adjoint solves started at ``x``."""
    xs = np.atleast_1d(np.asarray(x, float))
    fwd = heat_kernel(problem, y, [t])
    g = problem.grid
    lhs = fwd.values[0, [g.index(v) for v in xs]]
    adj = adjoint_problem(problem)
    jy = g.index(y)
    rhs = np.array([heat_kernel(adj, v, [t]).values[0, jy] for v in xs])
    diff = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)))
    return CheckResult.compare("duality", diff, threshold, "<", inputs={"t": t, "x": xs.tolist(), "y": y, "W": problem.W})


def chapman_kolmogorov_check(problem: ProblemSpec, t: float, s: float, x, y: float, threshold: float = 1e-2) -> CheckResult:
    """``P(t+s, x, y)`` vs ``sum_z nu(z) P(t, x, z) P(s, z, y) h``."""
    g = problem.grid
    xs = np.atleast_1d(np.asarray(x, float))
    fwd = heat_kernel(problem, y, sorted({s, t + s}))
    if int(fwd.steps[np.argmin(np.abs(fwd.times - s))]) < MIN_RELIABLE_STEPS or t <= 0:
        msg = "t or s below 10 time steps; semigroup check skipped"
        warnings.warn(msg, UnresolvedDelta, stacklevel=2)
        return CheckResult("chapman_kolmogorov", float("nan"), threshold, True, "skipped", details={"skipped": msg})
    Ps = fwd.at(s)
    adj = adjoint_problem(problem)
    lhs, rhs = [], []
    for v in xs:
        tab = heat_kernel(adj, v, [t])
        if tab.steps[0] < MIN_RELIABLE_STEPS:
            msg = "t below 10 time steps; semigroup check skipped"
            warnings.warn(msg, UnresolvedDelta, stacklevel=2)
            return CheckResult("chapman_kolmogorov", float("nan"), threshold, True, "skipped", details={"skipped": msg})
        Pt_x = tab.values[0]  # P(t, x, z) = P_hat(t, z, x)
        rhs.append(float(np.sum(fwd.weight * Pt_x * Ps) * g.h))
        lhs.append(float(fwd.at(t + s)[g.index(v)]))
    lhs, rhs = np.array(lhs), np.array(rhs)
    err = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)))
    return CheckResult.compare("chapman_kolmogorov", err, threshold, "<", inputs={"t": t, "s": s, "x": xs.tolist(), "y": y})


def supersolution_residual(
    problem: ProblemSpec,
    Tt: CorrectorSolution | None = None,
    sigma: float | None = None,
    t_list=None,
    m: int = SUBSAMPLES,
) -> tuple[float, np.ndarray]:
    """Discrete ``-nu rho_t - (nu a rho_x)_x - W rho_x`` for the Gaussian weight built on the adjoint corrector.

    ``rho(t, x) = exp(-|T~(x) - (t-1) W|^2 / (sigma (2-t)))``, default ``sigma = 4 M_hat^2``.
    Returns the minimum over interior nodes and ``t`` together with the per-node minimum.
    """
    g = problem.grid
    a, nu, W = problem.a, problem.nu, problem.W
    if Tt is None:
        Tt = adjoint_corrector(a, nu, W, g, m=m)
    if sigma is None:
        sigma = 4.0 * Tt.M_hat**2
    if t_list is None:
        t_list = np.linspace(0.05, 0.95, 19)
    h = g.h
    kf = face_harmonic(a, g, nu, m)
    nv = cell_average(nu, g, m)[1:-1]
    worst = np.full(g.n - 2, np.inf)
    for t in t_list:
        Z = Tt.T - (t - 1.0) * W
        D = sigma * (2.0 - t)
        rho = np.exp(-(Z**2) / D)
        rho_t = rho * (2 * Z * W / D - Z**2 * sigma / D**2)
        div = (kf[1:] * (rho[2:] - rho[1:-1]) - kf[:-1] * (rho[1:-1] - rho[:-2])) / h**2
        conv = W * (rho[2:] - rho[:-2]) / (2 * h)
        res = -nv * rho_t[1:-1] - div - conv
        worst = np.minimum(worst, res)
    return float(worst.min()), worst


def grid_convergence(make_problem, y: float, t: float, probes, levels: int = 3, h0: float | None = None) -> CheckResult:
    """Successive changes of ``P(t, probes, y)`` under h -> h/2; requires a contracting sequence.

    ``make_problem(grid_refine)`` returns the problem at refinement level ``k`` (h / 2^k).
    """
    vals = []
    for k in range(levels):
        pb = make_problem(k)
        tab = heat_kernel(pb, y, [t])
        vals.append(np.array([tab.values[0, pb.grid.index(p)] for p in probes]))
    changes = [float(np.max(np.abs(vals[i + 1] - vals[i]))) for i in range(levels - 1)]
    ratios = [changes[i + 1] / changes[i] for i in range(len(changes) - 1) if changes[i] > 0]
    worst = max(ratios) if ratios else 0.0
    orders = [float(np.log2(1 / r)) if r > 0 else float("inf") for r in ratios]
    return CheckResult.compare(
        "kernel_grid_convergence", worst, 1.0, "<", inputs={"t": t, "probes": list(probes)}, details={"changes": changes, "observed_order": orders}
    )


# --- Green functions ------------------------------------------------------------------


@dataclass(frozen=True)
class GreenTable:
    lam: float
    y: float
    grid: Grid
    values: np.ndarray
    route: str
    meta: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def columns(self) -> dict[str, np.ndarray]:
        return {"x": self.x, "value": self.values, "route": np.array([self.route] * self.grid.n)}


@dataclass(frozen=True)
class GreenPair:
    elliptic: GreenTable
    quadrature: GreenTable
    cross_difference: float


def _green_elliptic(op: Operator, lam: float, W: float, j: int) -> np.ndarray:
    c = lam * W * W
    n = op.grid.n
    ab = np.zeros((3, n - 2))
    ab[0, 1:] = -op.upper[1:-2]
    ab[1] = c * op.weight[1:-1] - op.diag[1:-1]
    ab[2, :-1] = -op.lower[2:-1]
    rhs = np.zeros(n - 2)
    rhs[j - 1] = op.weight[j] / op.grid.h  # nu(y)
    try:
        inner = solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc
    return np.concatenate([[0.0], inner, [0.0]])


def _green_quadrature(op: Operator, lam: float, W: float, j: int, mu: float, tail_tol: float = 1e-12):
    """``nu(y) * int_0^inf e^{-lam W^2 t} P(t, ., y) dt`` by the trapezoid rule over the CN steps."""
    c = lam * W * W
    p = _delta(op, j)
    nu_y = op.weight[j] / op.grid.h
    stepper = _Stepper(op)
    state = KernelState(0.0, p)
    acc = np.zeros(op.grid.n)
    h = op.grid.h
    t_end = -np.log(tail_tol) / c
    k = 0
    while True:
        dt = h * h / 4 if k < RAMP_STEPS else h / 4
        new = stepper.step(state, dt)
        acc += 0.5 * dt * (np.exp(-c * state.t) * state.p + np.exp(-c * new.t) * new.p)
        state = new
        k += 1
        if state.t >= t_end:
            tail = mu**2 * float(np.max(np.abs(state.p))) * np.exp(-c * state.t) / c
            if tail <= tail_tol * float(np.max(acc)):
                break
            t_end *= 1.5
    return nu_y * acc, {"t_end": state.t, "tail_bound": nu_y * tail, "steps": k}


def green_function(problem: ProblemSpec, lam: float, y: float, decay_floor: float = 1e-10, m: int = SUBSAMPLES) -> GreenPair:
    """Resolvent kernel of ``-(a nu G_x)_x + W G_x + lam W^2 nu G = nu delta_y`` by two routes."""
    if not lam > 0:
        raise InvalidSpec("lambda must be positive")
    if not (problem.canonical and problem.W > 0):
        raise InvalidSpec("green_function needs a canonical problem with W > 0")
    g = problem.grid
    j = g.index(y)
    op = operator_for(problem, m)
    GA = _green_elliptic(op, lam, problem.W, j)
    edge = max(abs(GA[1]), abs(GA[-2]))
    if edge > decay_floor:
        raise DomainTooSmall(f"Green function is {edge:.3g} next to the boundary (> {decay_floor:g})")
    GB, meta = _green_quadrature(op, lam, problem.W, j, problem.mu)
    both = (GA > 1e-8) & (GB > 1e-8)
    cross = float(np.max(np.abs(GA[both] - GB[both]) / GA[both])) if both.any() else float("nan")
    yy = float(g.x[j])
    return GreenPair(GreenTable(lam, yy, g, GA, "elliptic-solve"), GreenTable(lam, yy, g, GB, "time-quadrature", meta), cross)


def green_closed_form(lam: float, W: float, x, y: float) -> np.ndarray:
    """Constant-coefficient (a = nu = 1) resolvent kernel."""
    s = np.sqrt(1 + 4 * lam)
    d = np.asarray(x, float) - y
    rate = np.where(d >= 0, W * (1 - s) / 2, W * (1 + s) / 2)
    return np.exp(rate * d) / (W * s)


def _bisect_min(pred, lo: float = 1.0, tol: float = 1e-4, cap: float = 1e12) -> float:
    """Smallest C >= ~0 with pred(C) true, for a predicate monotone (false -> true) in C."""
    hi = lo
    while not pred(hi):
        hi *= 2
        if hi > cap:
            return float("inf")
    lo = hi / 2
    while lo > 1e-12 and pred(lo):
        hi, lo = lo, lo / 2
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def green_sandwich_constant(green: GreenTable, T: CorrectorSolution, W: float, floor: float = 1e-8) -> CheckResult:
    """Smallest C for which both resolvent bounds hold at every node with T(x) >= T(y)."""
    lam = green.lam
    Ty = T(green.y)
    X = T.T - Ty
    sel = (X >= 0) & (green.values > floor)
    if not sel.any():
        raise EmptyTrustRegion("no nodes with T(x) >= T(y) and G above the floor")
    Cs = []
    for Xi, Gi in zip(X[sel], green.values[sel]):
        lnG = np.log(Gi)

        def lower_ok(C, Xi=Xi, lnG=lnG):
            return -np.log(W * C * np.sqrt(lam + C)) - 2 * W * np.sqrt(C) * (np.sqrt(lam + C) - np.sqrt(C)) * Xi <= lnG

        def upper_ok(C, Xi=Xi, lnG=lnG):
            return np.log(C / (W * np.sqrt(lam * C + 1))) - (2 * W / C) * (np.sqrt(lam * C + 1) - 1) * Xi >= lnG

        Cs.append(max(_bisect_min(lower_ok), _bisect_min(upper_ok)))
    C = float(max(Cs))
    return CheckResult.finite("green_sandwich_constant", C, inputs={"lambda": lam, "y": green.y, "W": W}, details={"points": int(sel.sum())})


def laplace_identity_check(a_param: float, b_param: float, X_list, tol: float = 1e-6) -> list[CheckResult]:
    """Quadrature of ``int_0^inf e^{-a t} e^{-b (X-t)^2/t} t^{-1/2} dt`` vs the closed form.

    Negative X are evaluated and recorded; only X >= 0 is required to match.
    """
    if not (a_param > 0 and b_param > 0):
        raise InvalidSpec("a and b must be positive")
    a, b = a_param, b_param
    out = []
    for X in X_list:
        # t = s^2 removes the endpoint singularity
        def f(s, X=X):
            if s == 0.0:
                return 0.0
            t = s * s
            return 2.0 * np.exp(-a * t - b * (X - t) ** 2 / t)

        peak = np.sqrt(abs(X) * np.sqrt(b / (a + b))) if X != 0 else 1.0
        lhs = sum(
            integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=500)[0]
            for lo, hi in ((0.0, peak), (peak, 4 * peak + 10.0), (4 * peak + 10.0, np.inf))
        )
        rhs = np.sqrt(np.pi / (a + b)) * np.exp(-2 * np.sqrt(b) * (np.sqrt(a + b) - np.sqrt(b)) * X)
        rel = abs(lhs - rhs) / abs(rhs)
        if X >= 0:
            out.append(CheckResult.compare("laplace_identity", rel, tol, "<=", inputs={"a": a, "b": b, "X": X}))
        else:
            out.append(
                CheckResult(
                    "laplace_identity_negative_X",
                    rel,
                    None,
                    True,
                    "recorded",
                    inputs={"a": a, "b": b, "X": X},
                    details={"quadrature": lhs, "closed_form": rhs},
                )
            )
    return out
