"""Benchmark figure for the ``bench`` command."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

LAYER_COLORS = {"provenance": "#2a7ab0", "metadata": "#7a3fa0", "exif": "#d08a1c"}


def plot_bench(rows: list[dict], budgets: dict[str, float], path) -> None:
    """Per-iteration timings with budget lines, one panel per measured step.

    ``rows`` are the dicts written to the CSV (``iteration`` plus one
    ``<step>_ms`` column per step); ``budgets`` maps step name to a ms limit.
    """
    steps = [k[:-3] for k in rows[0] if k.endswith("_ms")]
    fig = Figure(figsize=(3.2 * len(steps), 3.0), layout="constrained")
    axes = fig.subplots(1, len(steps), squeeze=False)[0]
    xs = [r["iteration"] for r in rows]
    for ax, step in zip(axes, steps):
        ys = [r[f"{step}_ms"] for r in rows]
        ax.plot(xs, ys, "o-", ms=3, lw=1, color=LAYER_COLORS.get(step, "k"))
        if step in budgets:
            ax.axhline(budgets[step], ls="--", lw=0.8, color="#c0392b", label=f"budget {budgets[step]:g} ms")
            ax.legend(frameon=False, fontsize=7)
        ax.set_title(step, fontsize=9)
        ax.set_xlabel("iteration")
        # budgets sit orders of magnitude above typical timings
        ax.set_yscale("log")
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.spines[["top", "right"]].set_visible(False)
    axes[0].set_ylabel("ms")
    fig.savefig(path, dpi=120)
