"""Run configuration: strict TOML schema with printed defaults.

Every section and key is declared in ``SCHEMA``; unknown keys are rejected.
Defaults are filled in at parse time so that the normalised configuration
(written into every report) states every tolerance that affects pass/fail.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib
import tomli_w

from .errors import InvalidSpec
from .fields import CoefficientField, Grid, ProblemSpec, make_field

PIPELINES = ("corrector", "eigen", "kernel", "green", "verify", "all")

_REQ = object()  # marker: key required

# section -> key -> (type(s), default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "name": (str, "run"),
        "pipeline": (str, "all"),
        "seed": (int, 0),
    },
    "grid": {
        "L": (float, _REQ),
        "h": (float, _REQ),
    },
    "canonical": {
        "W": (float, _REQ),
        "W_sweep": (list, []),
    },
    "original": {
        "gamma": (float, None),
        "gamma_offset": (float, None),
        "L_margin": (float, 60.0),
    },
    "kernel": {
        "y": (float, 0.0),
        "t_min": (float, 0.1),
        "t_max": (float, 1.0),
        "dt_out": (float, 0.05),
        "ck_t": (float, 0.25),
        "ck_x": (list, [-0.5, 0.0, 0.5]),
        "killed_R": (float, 2.0),
        "killed_times": (list, [0.5, 1.0, 2.0, 3.0]),
    },
    "green": {
        "lambda": (float, 2.0),
        "L": (float, 40.0),
        "laplace_a": (float, 1.0),
        "laplace_b": (float, 1.0),
        "laplace_X": (list, [0.0, 0.5, 1.0, 2.0, -1.0]),
    },
    "verify": {
        "z_over_sqrt_t": (float, 6.0),
        "refine": (bool, True),
        "delta": (float, 0.5),
        "tube_R": (float, 1.0),
        "tube_s": (list, [0.5, 1.0, 2.0, 3.0, 4.0]),
        "osc_t_max": (float, 5.0),
        "near_diagonal_r": (float, 1.0),
        "scaling_sigma": (list, [1.0, 2.0]),
        "scaling_z": (float, 0.3),
        "route_R": (float, 40.0),
    },
    "tolerances": {
        "route_agreement": (float, 1e-3),
        "corrector_identification": (float, 1e-3),
        "wronskian_rel_std": (float, 1e-5),
        "original_routes": (float, 1e-2),
        "duality": (float, 1e-2),
        "chapman_kolmogorov": (float, 1e-2),
        "green_routes": (float, 5e-3),
        "laplace": (float, 1e-6),
        "refinement": (float, 0.1),
        "w_sweep_factor": (float, 1.5),
        "scaling": (float, 1e-2),
        "conservation": (float, 1e-6),
        "nash_refinement": (float, 0.05),
    },
}
REQUIRED_SECTIONS = ("grid", "fields", "canonical")
FIELD_KEYS = {"kind", "mu", "seed", "params", "role"}
FIELD_NAMES = {"a": "coefficient", "nu": "coefficient", "r": "potential"}


def _coerce(section: str, key: str, value: Any, typ: type):
    where = f"[{section}].{key}"
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidSpec(f"{where} must be a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise InvalidSpec(f"{where} must be finite")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidSpec(f"{where} must be an integer, got {value!r}")
        return value
    if not isinstance(value, typ):
        raise InvalidSpec(f"{where} must be {typ.__name__}, got {value!r}")
    return value


def normalize(raw: dict) -> dict:
    """Validate ``raw`` against the schema and fill defaults."""
    if not isinstance(raw, dict):
        raise InvalidSpec("configuration must be a table")
    unknown = set(raw) - set(SCHEMA) - {"fields"}
    if unknown:
        raise InvalidSpec(f"unknown configuration sections {sorted(unknown)}")
    for sec in REQUIRED_SECTIONS:
        if sec not in raw:
            raise InvalidSpec(f"missing required section [{sec}]")
    out: dict = {}
    for sec, keys in SCHEMA.items():
        given = raw.get(sec, {})
        if not isinstance(given, dict):
            raise InvalidSpec(f"[{sec}] must be a table")
        bad = set(given) - set(keys)
        if bad:
            raise InvalidSpec(f"unknown keys in [{sec}]: {sorted(bad)}")
        table = {}
        for key, (typ, default) in keys.items():
            if key in given:
                table[key] = _coerce(sec, key, given[key], typ)
            elif default is _REQ:
                raise InvalidSpec(f"missing required key [{sec}].{key}")
            elif default is not None:
                table[key] = copy.deepcopy(default)
        out[sec] = table
    fields = raw["fields"]
    if not isinstance(fields, dict):
        raise InvalidSpec("[fields] must be a table")
    bad = set(fields) - set(FIELD_NAMES)
    if bad:
        raise InvalidSpec(f"unknown fields {sorted(bad)}; expected a, nu, r")
    for need in ("a", "nu"):
        if need not in fields:
            raise InvalidSpec(f"missing field [fields.{need}]")
    out["fields"] = {}
    for name, spec in fields.items():
        if not isinstance(spec, dict):
            raise InvalidSpec(f"[fields.{name}] must be a table")
        extra = set(spec) - FIELD_KEYS
        if extra:
            raise InvalidSpec(f"unknown keys in [fields.{name}]: {sorted(extra)}")
        out["fields"][name] = copy.deepcopy(spec)
    if out["run"]["pipeline"] not in PIPELINES:
        raise InvalidSpec(f"pipeline must be one of {PIPELINES}")
    orig = out["original"]
    if "gamma" in orig and "gamma_offset" in orig:
        raise InvalidSpec("[original] takes gamma or gamma_offset, not both")
    if ("gamma" in orig or "gamma_offset" in orig) and "r" not in out["fields"]:
        raise InvalidSpec("[original] needs a potential field [fields.r]")
    g = out["grid"]
    if not (g["L"] > 0 and g["h"] > 0):
        raise InvalidSpec("grid L and h must be positive")
    n = 2 * g["L"] / g["h"]
    if abs(n - round(n)) > 1e-6 * n:
        raise InvalidSpec("grid L must be a multiple of h")
    return out


@dataclass(frozen=True)
class RunConfig:
    data: dict

    # construction ------------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return cls(normalize(raw))

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise InvalidSpec(f"malformed configuration: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidSpec(f"cannot read configuration {path}: {exc}") from exc
        return cls.from_toml(text)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.data)

    def with_overrides(self, pipeline: str | None = None, seed: int | None = None, grid_refine: int = 0) -> "RunConfig":
        d = copy.deepcopy(self.data)
        if pipeline is not None:
            d["run"]["pipeline"] = pipeline
        if seed is not None:
            d["run"]["seed"] = int(seed)
        if grid_refine:
            if grid_refine < 0:
                raise InvalidSpec("--grid-refine must be >= 0")
            d["grid"]["h"] = d["grid"]["h"] / 2**grid_refine
        return RunConfig(normalize(d))

    # accessors ---------------------------------------------------------------

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    @property
    def seed(self) -> int:
        return self.data["run"]["seed"]

    @property
    def pipeline(self) -> str:
        return self.data["run"]["pipeline"]

    @property
    def tolerances(self) -> dict:
        return self.data["tolerances"]

    def grid(self, refine: int = 0) -> Grid:
        g = self.data["grid"]
        return Grid.from_spacing(g["L"], g["h"] / 2**refine)

    def field(self, name: str) -> CoefficientField:
        spec = dict(self.data["fields"][name])
        if spec.get("kind") == "piecewise-random" and "seed" not in spec:
            spec["seed"] = self.seed + sorted(FIELD_NAMES).index(name)
        return make_field(spec, role=FIELD_NAMES[name])

    @property
    def has_original(self) -> bool:
        o = self.data["original"]
        return "r" in self.data["fields"] and ("gamma" in o or "gamma_offset" in o)

    def canonical_problem(self, W: float | None = None, refine: int = 0) -> ProblemSpec:
        W = self.data["canonical"]["W"] if W is None else W
        return ProblemSpec(self.field("a"), self.grid(refine), nu=self.field("nu"), W=W)

    def kernel_times(self) -> list[float]:
        k = self.data["kernel"]
        n = int(round((k["t_max"] - k["t_min"]) / k["dt_out"]))
        return [round(k["t_min"] + i * k["dt_out"], 12) for i in range(n + 1)]
