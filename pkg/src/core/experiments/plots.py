"""SVG figures rendered headless with matplotlib's Agg backend."""

from __future__ import annotations

import io
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from src.core.experiments.drivers import ScaleRow, ToyRun  # noqa: E402
from src.core.problems.toy2d import Toy2DLandscape  # noqa: E402

# 재실행 시 SVG 바이트가 같도록 id 솔트와 날짜를 고정
_SVG_RC = {"svg.hashsalt": "sage-opt", "svg.fonttype": "none"}
_SVG_META = {"Date": None}
STEPPER_COLORS = {
    "erm": "tab:gray",
    "sam": "tab:red",
    "sgld": "tab:green",
    "sage": "tab:purple",
    "sage_noise": "tab:blue",
}


def _to_svg(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return buf.getvalue()


def trajectories_svg(landscape: Toy2DLandscape, runs: Sequence[ToyRun], grid: int = 121) -> bytes:
    """Aggregate-loss contours, agreement field and traced trajectories."""

    with plt.rc_context(_SVG_RC):
        ticks = np.linspace(-3.0, 3.0, grid)
        gx, gy = np.meshgrid(ticks, ticks)
        pts = np.stack([gx, gy], axis=-1)
        loss = landscape.aggregate_loss(pts)
        agreement = landscape.agreement_field(pts)

        fig, ax = plt.subplots(figsize=(6, 5))
        field = ax.pcolormesh(gx, gy, agreement, cmap="RdBu", vmin=-1, vmax=1, shading="auto")
        fig.colorbar(field, ax=ax, label="gradient agreement S")
        ax.contour(gx, gy, loss, levels=20, colors="k", linewidths=0.4)

        labelled = set()
        for run in runs:
            color = STEPPER_COLORS.get(run.stepper, "k")
            label = None if run.stepper in labelled else run.stepper
            labelled.add(run.stepper)
            ax.plot(run.path[:, 0], run.path[:, 1], color=color, lw=0.8, label=label)
        for name, point in (("A", landscape.minimum_a), ("B", landscape.minimum_b)):
            ax.plot(*point, marker="*", color="gold", ms=12, mec="k")
            ax.annotate(name, point, xytext=(5, 5), textcoords="offset points")
        ax.set_xlim(-3, 3)
        ax.set_ylim(-3, 3)
        ax.set_xlabel("theta_1")
        ax.set_ylabel("theta_2")
        if labelled:
            ax.legend(loc="lower left", fontsize=8)
        return _to_svg(fig)


def scale_invariance_svg(rows: Sequence[ScaleRow], nobias_rows: Sequence[ScaleRow] = ()) -> bytes:
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        alphas = [r.alpha for r in rows]
        ax.plot(alphas, [r.sharpness_sam for r in rows], "o-", color="tab:red", label="SAM (L2)")
        ax.plot(alphas, [r.sharpness_adaptive for r in rows], "s-", color="tab:orange", label="adaptive L2")
        ax.plot(alphas, [r.sharpness_spectral for r in rows], "^-", color="tab:blue", label="spectral")
        if nobias_rows:
            ax.plot(
                [r.alpha for r in nobias_rows],
                [r.sharpness_spectral for r in nobias_rows],
                "^--",
                color="tab:cyan",
                label="spectral (no bias)",
            )
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("rescaling factor alpha")
        ax.set_ylabel("L(theta + eps) - L(theta)")
        ax.legend(fontsize=8)
        return _to_svg(fig)
