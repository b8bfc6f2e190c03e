"""Coefficient fields, grids and problem descriptions.

Fields are pure functions of ``(kind, params, seed, x)``.  Random fields are
piecewise constant on cells of fixed width; the value of a cell is drawn from
a user list through a counter-based hash of ``(seed, cell index)`` so that a
field can be evaluated at arbitrary points without carrying any state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Mapping

import numpy as np

from .errors import EllipticityViolation, InvalidSpec

KINDS = (
    "constant",
    "periodic-trig",
    "piecewise-periodic",
    "quasiperiodic",
    "piecewise-random",
    "tabulated",
)
ROLES = ("coefficient", "potential")

# number of sub-samples per grid interval used for face and cell averages
SUBSAMPLES = 4


@dataclass(frozen=True)
class Grid:
    """Uniform symmetric grid on [-L, L] with an odd number of nodes (x = 0 is a node)."""

    L: float
    n: int

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise InvalidSpec(f"grid point count must be odd and >= 3, got {self.n}")
        if not self.L > 0:
            raise InvalidSpec(f"grid half-width must be positive, got {self.L}")

    @classmethod
    def from_spacing(cls, L: float, h: float) -> "Grid":
        half = L / h
        k = int(round(half))
        if k < 1 or abs(half - k) > 1e-9 * max(1.0, half):
            raise InvalidSpec(f"L={L} is not a multiple of h={h}")
        return cls(L=float(L), n=2 * k + 1)

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        m = (self.n - 1) // 2
        return np.arange(-m, m + 1) * self.h

    @property
    def center(self) -> int:
        return (self.n - 1) // 2

    def index(self, x0: float) -> int:
        """Index of the node at ``x0``; raises if ``x0`` is not (close to) a node."""
        k = (x0 + self.L) / self.h
        i = int(round(k))
        if not 0 <= i < self.n or abs(k - i) > 1e-6:
            raise InvalidSpec(f"{x0} is not a node of {self}")
        return i

    def refined(self, k: int = 1) -> "Grid":
        """Grid with the spacing halved ``k`` times."""
        n = self.n
        for _ in range(k):
            n = 2 * n - 1
        return Grid(self.L, n)

    def sub_midpoints(self, m: int = SUBSAMPLES) -> np.ndarray:
        """Midpoints of the ``m`` sub-intervals of every interval [x_i, x_{i+1}], shape (n-1, m)."""
        off = (np.arange(m) + 0.5) / m
        return self.x[:-1, None] + self.h * off[None, :]


def _seed_hash(seed: int, cell: int) -> int:
    return _seed_hash_cached(int(seed), int(cell))


@lru_cache(maxsize=1 << 16)
def _seed_hash_cached(seed: int, cell: int) -> int:
    # SeedSequence mixes its entropy words with a hash; cheap enough per cell
    words = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF, abs(cell) & 0xFFFFFFFF, 1 if cell < 0 else 0]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass(frozen=True)
class CoefficientField:
    """Evaluable coefficient with a declared ellipticity constant.

    ``role`` is ``"coefficient"`` for a, nu (values in [1/mu, mu]) and
    ``"potential"`` for r (values in [-mu, mu]).  The optional affine maps
    ``value = val_scale * f(arg_scale * x + arg_shift) + val_shift`` are used for
    reflection, rescaling and negative controls.
    """

    kind: str
    params: Mapping[str, Any]
    mu: float
    seed: int | None = None
    role: str = "coefficient"
    arg_scale: float = 1.0
    arg_shift: float = 0.0
    val_scale: float = 1.0
    val_shift: float = 0.0
    name: str = field(default="", compare=False)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = self._base(self.arg_scale * x + self.arg_shift)
        if self.val_scale != 1.0 or self.val_shift != 0.0:
            v = self.val_scale * v + self.val_shift
        return v

    def _base(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        k = self.kind
        if k == "constant":
            return np.full_like(x, float(p["value"]))
        if k == "periodic-trig":
            period = float(p.get("period", 1.0))
            phase = float(p.get("phase", 0.0))
            return float(p["mean"]) + float(p["amplitude"]) * np.cos(2 * np.pi * x / period + phase)
        if k == "quasiperiodic":
            freqs = p.get("frequencies", (1.0, math.sqrt(2.0)))
            s = np.zeros_like(x)
            for f in freqs:
                s += np.cos(float(f) * x)
            return float(p["mean"]) + float(p["amplitude"]) * s
        if k == "piecewise-periodic":
            vals = np.asarray(p["values"], dtype=float)
            width = float(p.get("width", 1.0))
            cells = np.floor(x / width).astype(np.int64)
            return vals[np.mod(cells, len(vals))]
        if k == "piecewise-random":
            vals = np.asarray(p["values"], dtype=float)
            width = float(p.get("width", 1.0))
            cells = np.floor(x / width).astype(np.int64)
            uniq, inv = np.unique(cells, return_inverse=True)
            picks = np.array([_seed_hash(self.seed, c) % len(vals) for c in uniq], dtype=np.int64)
            return vals[picks[inv]].reshape(x.shape)
        if k == "tabulated":
            knots = np.asarray(p["x"], dtype=float)
            vals = np.asarray(p["values"], dtype=float)
            # nearest knot: piecewise constant on the cells centred at the knots
            mids = 0.5 * (knots[1:] + knots[:-1])
            return vals[np.searchsorted(mids, x, side="right")]
        raise InvalidSpec(f"unknown field kind {k!r}")

    def value_range(self) -> tuple[float, float]:
        """Analytic range of the field over the real line."""
        p = self.params
        k = self.kind
        if k == "constant":
            lo = hi = float(p["value"])
        elif k == "periodic-trig":
            lo = float(p["mean"]) - abs(float(p["amplitude"]))
            hi = float(p["mean"]) + abs(float(p["amplitude"]))
        elif k == "quasiperiodic":
            nf = len(p.get("frequencies", (1.0, math.sqrt(2.0))))
            lo = float(p["mean"]) - nf * abs(float(p["amplitude"]))
            hi = float(p["mean"]) + nf * abs(float(p["amplitude"]))
        elif k in ("piecewise-periodic", "piecewise-random", "tabulated"):
            vals = np.asarray(p["values"], dtype=float)
            lo, hi = float(vals.min()), float(vals.max())
        else:
            raise InvalidSpec(f"unknown field kind {k!r}")
        a, b = self.val_scale * lo + self.val_shift, self.val_scale * hi + self.val_shift
        return min(a, b), max(a, b)

    # derived fields -----------------------------------------------------

    def reflected(self) -> "CoefficientField":
        """x -> f(-x)."""
        return replace(self, arg_scale=-self.arg_scale, arg_shift=self.arg_shift)

    def rescaled(self, sigma: float, z: float = 0.0) -> "CoefficientField":
        """x -> f(sigma * (x + z))."""
        return replace(
            self,
            arg_scale=self.arg_scale * sigma,
            arg_shift=self.arg_shift + self.arg_scale * sigma * z,
        )

    def scaled(self, c: float) -> "CoefficientField":
        return replace(self, val_scale=self.val_scale * c, val_shift=self.val_shift * c)

    def shifted(self, c: float) -> "CoefficientField":
        return replace(self, val_shift=self.val_shift + c)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "mu": self.mu, "params": _plain(self.params)}
        if self.seed is not None:
            d["seed"] = self.seed
        if self.role != "coefficient":
            d["role"] = self.role
        return d


def _plain(obj):
    if isinstance(obj, Mapping):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


_REQUIRED = {
    "constant": ("value",),
    "periodic-trig": ("mean", "amplitude"),
    "piecewise-periodic": ("values",),
    "quasiperiodic": ("mean", "amplitude"),
    "piecewise-random": ("values",),
    "tabulated": ("x", "values"),
}


def make_field(spec: Mapping[str, Any], role: str = "coefficient", validate: bool = True) -> CoefficientField:
    """Build a field from a description ``{kind, mu, seed?, params}``.

    Raises :class:`EllipticityViolation` when the declared values leave
    [1/mu, mu] (coefficients) or [-mu, mu] (potentials).
    """
    spec = dict(spec)
    kind = spec.get("kind")
    if kind not in KINDS:
        raise InvalidSpec(f"unknown field kind {kind!r}; expected one of {KINDS}")
    role = spec.get("role", role)
    if role not in ROLES:
        raise InvalidSpec(f"unknown field role {role!r}")
    try:
        mu = float(spec["mu"])
    except KeyError:
        raise InvalidSpec("field spec needs an ellipticity constant 'mu'") from None
    if not mu > 0:
        raise InvalidSpec(f"mu must be positive, got {mu}")
    params = dict(spec.get("params", {}))
    missing = [k for k in _REQUIRED[kind] if k not in params]
    if missing:
        raise InvalidSpec(f"{kind} field is missing params {missing}")
    seed = spec.get("seed")
    if kind == "piecewise-random" and seed is None:
        raise InvalidSpec("piecewise-random fields need a seed")
    if kind == "tabulated":
        knots = np.asarray(params["x"], dtype=float)
        if knots.shape != np.asarray(params["values"]).shape or np.any(np.diff(knots) <= 0):
            raise InvalidSpec("tabulated field needs increasing knots matching its values")
    f = CoefficientField(kind=kind, params=params, mu=mu, seed=None if seed is None else int(seed), role=role)
    if validate:
        lo, hi = f.value_range()
        if role == "coefficient":
            if lo < 1.0 / mu * (1 - 1e-12) or hi > mu * (1 + 1e-12):
                raise EllipticityViolation(f"{kind} field range [{lo:g}, {hi:g}] not inside [1/mu, mu] for mu={mu:g}")
        elif max(abs(lo), abs(hi)) > mu * (1 + 1e-12):
            raise EllipticityViolation(f"{kind} potential range [{lo:g}, {hi:g}] exceeds mu={mu:g}")
    return f


def sample_points(grid: Grid, m: int = SUBSAMPLES) -> np.ndarray:
    """Nodes together with the sub-interval midpoints used by the solvers."""
    return np.concatenate([grid.x, grid.sub_midpoints(m).ravel()])


def ellipticity_check(f: CoefficientField, grid: Grid, strict: bool = False) -> float:
    """Effective ellipticity constant of ``f`` scanned on the grid.

    Coefficients return ``max(sup f, 1/inf f)``; potentials return ``sup |f|``.
    ``strict=True`` also raises when the declared ``mu`` is exceeded.
    """
    v = f(sample_points(grid))
    if f.role == "coefficient":
        inf = float(v.min())
        if inf <= 0:
            raise EllipticityViolation(f"coefficient reaches {inf:g} <= 0 on the grid")
        mu_eff = max(float(v.max()), 1.0 / inf)
    else:
        mu_eff = float(np.abs(v).max())
    if strict and mu_eff > f.mu * (1 + 1e-12):
        raise EllipticityViolation(f"effective mu {mu_eff:g} exceeds declared mu {f.mu:g}")
    return mu_eff


def face_harmonic(f: CoefficientField, grid: Grid, g: CoefficientField | None = None, m: int = SUBSAMPLES) -> np.ndarray:
    """Harmonic mean of ``f * g`` over every interval [x_i, x_{i+1}] (length n-1)."""
    pts = grid.sub_midpoints(m)
    v = f(pts)
    if g is not None:
        v = v * g(pts)
    return 1.0 / np.mean(1.0 / v, axis=1)


def cell_average(f: CoefficientField, grid: Grid, m: int = SUBSAMPLES) -> np.ndarray:
    """Mean of ``f`` over the control volumes [x_i - h/2, x_i + h/2] (length n)."""
    off = ((np.arange(m) + 0.5) / m - 0.5) * grid.h
    return np.mean(f(grid.x[:, None] + off[None, :]), axis=1)


def tabulate(values: np.ndarray, grid: Grid, mu: float, role: str = "coefficient", validate: bool = False) -> CoefficientField:
    """Piecewise-constant field taking ``values[i]`` on the control volume of node i."""
    spec = {"kind": "tabulated", "mu": mu, "role": role, "params": {"x": grid.x, "values": np.asarray(values, float)}}
    return make_field(spec, validate=validate)


@dataclass(frozen=True)
class ProblemSpec:
    """Canonical (a, nu, W) or original (a, r, gamma) problem on a grid."""

    a: CoefficientField
    grid: Grid
    nu: CoefficientField | None = None
    r: CoefficientField | None = None
    W: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        canonical = self.W is not None
        original = self.gamma is not None
        if canonical == original:
            raise InvalidSpec("exactly one of W (canonical) or gamma (original) must be set")
        if canonical and self.nu is None:
            raise InvalidSpec("canonical problems need nu")
        if original and self.r is None:
            raise InvalidSpec("original problems need r")

    @property
    def canonical(self) -> bool:
        return self.W is not None

    @property
    def mu(self) -> float:
        other = self.nu if self.canonical else self.r
        return max(self.a.mu, other.mu)

    def with_W(self, W: float) -> "ProblemSpec":
        return replace(self, W=float(W))

    def with_grid(self, grid: Grid) -> "ProblemSpec":
        return replace(self, grid=grid)

    def normalized(self) -> tuple["ProblemSpec", bool]:
        """Reflect x -> -x when W < 0 so that the returned problem has W >= 0."""
        if not self.canonical or self.W >= 0:
            return self, False
        return replace(self, a=self.a.reflected(), nu=self.nu.reflected(), W=-self.W), True


@dataclass(frozen=True)
class DriftElimination:
    r_tilde: np.ndarray
    log_weight: np.ndarray  # integral_0^x b / (2a)
    fd_derivative: bool


def eliminate_drift(a, b, r, grid: Grid, b_prime=None) -> DriftElimination:
    """Remove a drift from ``u_t = (a u_x)_x + b u_x + r u``.

    With ``v = u * exp(int_0^x b/(2a))`` the equation becomes
    ``v_t = (a v_x)_x + r_tilde v`` where ``r_tilde = r - b'/2 - b^2/(4a)``.
    ``a, b, r`` are node samples (or fields).  When ``b_prime`` is not given it
    is obtained by finite differences and the result is flagged.
    """
    x = grid.x
    a, b, r = (np.asarray(v(x) if callable(v) else v, dtype=float) for v in (a, b, r))
    fd = b_prime is None
    if fd:
        db = np.gradient(b, grid.h, edge_order=2)
    else:
        db = np.asarray(b_prime(x) if callable(b_prime) else b_prime, dtype=float)
    r_tilde = r - 0.5 * db - b**2 / (4.0 * a)
    integrand = b / (2.0 * a)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * grid.h)])
    log_weight = cum - cum[grid.center]
    return DriftElimination(r_tilde=r_tilde, log_weight=log_weight, fd_derivative=fd)
