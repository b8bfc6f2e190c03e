"""Built-in run configurations used by the acceptance suite and the CLI."""

from __future__ import annotations

from .config import RunConfig
from .errors import InvalidSpec

_CONSTANT = """
[run]
name = "constant-w1"

[grid]
L = 20.0
h = 0.02

[fields.a]
kind = "constant"
mu = 1.0
params = { value = 1.0 }

[fields.nu]
kind = "constant"
mu = 1.0
params = { value = 1.0 }

[fields.r]
kind = "constant"
mu = 1.0
params = { value = 0.0 }

[canonical]
W = 1.0
W_sweep = [0.5, 1.0, 2.0]

[original]
gamma = 1.0
"""

_PERIODIC = """
[run]
name = "periodic"

[grid]
L = 20.0
h = 0.02

[fields.a]
kind = "periodic-trig"
mu = 2.0
params = { mean = 1.0, amplitude = 0.5, period = 1.0 }

[fields.nu]
kind = "periodic-trig"
mu = 2.0
params = { mean = 1.0, amplitude = 0.4, period = 1.7 }

[fields.r]
kind = "periodic-trig"
mu = 2.0
params = { mean = 0.0, amplitude = 0.5, period = 1.3 }

[canonical]
W = 1.0
W_sweep = [0.5, 1.0, 2.0]

[original]
gamma_offset = 1.0
"""

# a = 1.5 + 0.4 (cos x + cos sqrt(2) x) reaches 2.3, so mu = 2.5 is the smallest round admissible constant
_QUASI = """
[run]
name = "quasiperiodic"

[grid]
L = 20.0
h = 0.02

[fields.a]
kind = "quasiperiodic"
mu = 2.5
params = { mean = 1.5, amplitude = 0.4 }

[fields.nu]
kind = "quasiperiodic"
mu = 2.5
params = { mean = 1.0, amplitude = 0.2, frequencies = [1.0, 1.7320508075688772] }

[fields.r]
kind = "quasiperiodic"
mu = 2.5
params = { mean = 0.0, amplitude = 0.3 }

[canonical]
W = 1.0
W_sweep = [0.5, 1.0, 2.0]

[original]
gamma_offset = 1.0
"""

_RANDOM = """
[run]
name = "random-mu2"

[grid]
L = 20.0
h = 0.02

[fields.a]
kind = "piecewise-random"
mu = 2.0
seed = 11
params = { values = [0.5, 2.0], width = 1.0 }

[fields.nu]
kind = "piecewise-random"
mu = 2.0
seed = 12
params = { values = [0.5, 2.0], width = 1.0 }

[fields.r]
kind = "piecewise-random"
mu = 2.0
seed = 13
params = { values = [-0.5, 0.5], width = 1.0 }

[canonical]
W = 1.0
W_sweep = [0.5, 1.0, 2.0]

[original]
gamma_offset = 1.0
"""

_PRESETS = {
    "constant-w1": _CONSTANT,
    "periodic": _PERIODIC,
    "quasiperiodic": _QUASI,
    "random-mu2": _RANDOM,
}


def presets() -> list[str]:
    return list(_PRESETS)


def preset_toml(name: str) -> str:
    try:
        return _PRESETS[name].lstrip()
    except KeyError:
        raise InvalidSpec(f"unknown preset {name!r}; available: {presets()}") from None


def load_preset(name: str) -> RunConfig:
    return RunConfig.from_toml(preset_toml(name))
