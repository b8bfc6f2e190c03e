"""Check records and the append-only verification report."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

from . import __version__


@dataclass(frozen=True)
class CheckResult:
    """One named check: measured value against a threshold.

    ``comparison`` states how ``measured`` relates to ``threshold`` when the
    check passes (``"<="``, ``">="``, ``"<"``, ``">"`` or ``"finite"``).
    """

    check: str
    measured: float
    threshold: float | None
    passed: bool
    comparison: str = "<="
    inputs: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @classmethod
    def compare(cls, check: str, measured: float, threshold: float, comparison: str = "<=", **kw) -> "CheckResult":
        m = float(measured)
        ok = {
            "<=": lambda: m <= threshold,
            "<": lambda: m < threshold,
            ">=": lambda: m >= threshold,
            ">": lambda: m > threshold,
        }[comparison]()
        return cls(check, m, float(threshold), bool(ok and math.isfinite(m)), comparison, **kw)

    @classmethod
    def finite(cls, check: str, measured: float, **kw) -> "CheckResult":
        m = float(measured)
        return cls(check, m, None, math.isfinite(m), "finite", **kw)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        thr = "" if self.threshold is None else f" {self.comparison} {self.threshold:.6g}"
        return f"[{status}] {self.check}: {self.measured:.6g}{thr}"

    def to_json(self, inputs_hash: str = "") -> dict:
        return {
            "check": self.check,
            "inputs_hash": inputs_hash,
            "measured": _jsonable(self.measured),
            "threshold": _jsonable(self.threshold),
            "comparison": self.comparison,
            "pass": self.passed,
            "inputs": _jsonable(self.inputs),
            "details": _jsonable(self.details),
        }


def _jsonable(v: Any):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "tolist"):
        return _jsonable(v.tolist())
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def config_hash(obj: Any) -> str:
    """Stable short hash of a JSON-serialisable configuration."""
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class VerificationReport:
    """Ordered, append-only collection of :class:`CheckResult`."""

    def __init__(self, config_hash: str, toolkit_version: str = __version__):
        self.config_hash = config_hash
        self.toolkit_version = toolkit_version
        self._entries: list[CheckResult] = []

    def add(self, *results: CheckResult | Iterable[CheckResult]) -> None:
        for r in results:
            if isinstance(r, CheckResult):
                self._entries.append(r)
            else:
                self._entries.extend(r)

    @property
    def entries(self) -> tuple[CheckResult, ...]:
        return tuple(self._entries)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, name: str) -> CheckResult:
        for e in self._entries:
            if e.check == name:
                return e
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "toolkit_version": self.toolkit_version,
            "config_hash": self.config_hash,
            "passed": self.passed,
            "checks": [e.to_json(self.config_hash) for e in self._entries],
        }

    def summary(self) -> str:
        return "\n".join(e.line() for e in self._entries)
