"""Plot emission: a standalone script per figure, rendered to PNG when matplotlib is present."""

from __future__ import annotations

import runpy
from pathlib import Path

_COLLAPSE = '''\
"""Collapse plot: ln(P sqrt(t)) against z^2/t, z = T(x) - T(y) - W t."""
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
rows = list(csv.DictReader(open(here / "{csv_name}")))
u = [float(r["z2_over_t"]) for r in rows]
v = [float(r["ln_P_sqrt_t"]) for r in rows]
t = [float(r["t"]) for r in rows]

fig, ax = plt.subplots(figsize=(5.0, 3.4))
sc = ax.scatter(u, v, c=t, s=4, cmap="viridis")
fig.colorbar(sc, ax=ax, label="t")
ax.set_xlabel(r"$z^2/t$")
ax.set_ylabel(r"$\\ln(P\\sqrt{{t}})$")
ax.set_title("{title}")
ax.spines["right"].set_visible(False)
ax.spines["top"].set_visible(False)
fig.tight_layout()
fig.savefig(here / "{png_name}", dpi=150)
'''

_KERNEL = '''\
"""Kernel profiles P(t, x, y) at the output times."""
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
curves = defaultdict(lambda: ([], []))
for r in csv.DictReader(open(here / "{csv_name}")):
    xs, ps = curves[float(r["t"])]
    xs.append(float(r["x"]))
    ps.append(float(r["value"]))

fig, ax = plt.subplots(figsize=(5.0, 3.4))
times = sorted(curves)
for t in times[:: max(1, len(times) // 6)]:
    xs, ps = curves[t]
    ax.plot(xs, ps, lw=1, label=f"t={{t:g}}")
ax.set_xlabel("x")
ax.set_ylabel("P")
ax.legend(frameon=False, fontsize=7)
ax.set_title("{title}")
fig.tight_layout()
fig.savefig(here / "{png_name}", dpi=150)
'''

TEMPLATES = {"collapse": _COLLAPSE, "kernel": _KERNEL}


def emit_plot(kind: str, out_dir, csv_name: str, title: str = "", render: bool = True) -> dict:
    """Write ``plot_<kind>.py`` next to ``csv_name`` and optionally render ``<kind>.png``.

    Returns the paths written; rendering is skipped silently when matplotlib is absent.
    """
    out_dir = Path(out_dir)
    png_name = f"{kind}.png"
    script = out_dir / f"plot_{kind}.py"
    script.write_text(TEMPLATES[kind].format(csv_name=csv_name, png_name=png_name, title=title), encoding="utf-8")
    written = {"script": str(script)}
    if render:
        try:
            import matplotlib  # noqa: F401
        except ImportError:
            return written
        runpy.run_path(str(script), run_name="__main__")
        import matplotlib.pyplot as plt

        plt.close("all")
        written["image"] = str(out_dir / png_name)
    return written
