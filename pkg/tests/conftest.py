import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hetkern.fields import Grid, make_field

settings.register_profile(
    "hetkern",
    max_examples=15,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("hetkern")

# criterion number -> list of (label, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, list] = {}


def constant(value, mu=None, role="coefficient"):
    mu = mu if mu is not None else max(abs(value), 1.0 / abs(value) if value else 1.0, 1.0)
    return make_field({"kind": "constant", "mu": mu, "role": role, "params": {"value": value}}, role=role)


def random_field(seed, values=(0.5, 2.0), mu=2.0, role="coefficient", width=1.0):
    spec = {"kind": "piecewise-random", "mu": mu, "seed": seed, "params": {"values": list(values), "width": width}}
    return make_field(spec, role=role)


def periodic(mean=1.0, amplitude=0.5, period=1.0, mu=2.0, role="coefficient"):
    spec = {"kind": "periodic-trig", "mu": mu, "params": {"mean": mean, "amplitude": amplitude, "period": period}}
    return make_field(spec, role=role)


@pytest.fixture
def one():
    return constant(1.0)


@pytest.fixture
def small_grid():
    return Grid.from_spacing(10.0, 0.05)


def gaussian(t, x, y, W=0.0, D=1.0):
    """Advected heat kernel of p_t - D p_xx + W p_x = 0."""
    return np.exp(-((x - y - W * t) ** 2) / (4 * D * t)) / np.sqrt(4 * np.pi * D * t)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{label}: {'ok' if passed else 'FAILED'} ({info})" for label, passed, info in parts)
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} -- {detail}")
