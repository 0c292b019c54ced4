"""Figures written next to the CSV outputs. Rendering never feeds back into results."""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.bbox": "tight",
    "savefig.dpi": 150,
}

COLORS = {
    "soft-radial": "#1b6ca8",
    "orthogonal": "#c0392b",
    "softmax": "#7f8c8d",
    "hardnet": "#8e44ad",
    "dc3": "#27ae60",
}


def size(scale=1.0, ratio=None):
    width = 6.0 * scale
    ratio = ratio or (math.sqrt(5.0) - 1.0) / 2.0
    return (width, width * ratio)


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def _box(ax, lower, upper):
    (x0, y0), (x1, y1) = lower, upper
    ax.plot([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], color="k", lw=0.8)


def demo2d_figures(out_dir, traces: dict, target, lower, upper, warps: dict) -> list[str]:
    """``traces``: method -> Toy2dTrace; ``warps``: (family, lam, eps) -> (U, P)."""
    paths = []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=size(0.8, 1.0))
        _box(ax, lower, upper)
        for m, tr in traces.items():
            c = COLORS.get(m, None)
            ax.plot(tr.u[:, 0], tr.u[:, 1], "--", color=c, lw=0.9, label=f"{m}: candidate u")
            ax.plot(tr.p[:, 0], tr.p[:, 1], "-", color=c, lw=1.4, label=f"{m}: output p(u)")
        ax.plot(*target, "k*", ms=9, label="target")
        ax.set_aspect("equal")
        ax.set_xlabel("$x_1$")
        ax.set_ylabel("$x_2$")
        ax.legend(loc="upper left", frameon=False)
        paths.append(_save(fig, os.path.join(out_dir, "trajectory.png")))

        fig, ax = plt.subplots(figsize=size(0.8))
        for m, tr in traces.items():
            ax.semilogy(np.maximum(tr.loss, 1e-300), color=COLORS.get(m), label=m)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        paths.append(_save(fig, os.path.join(out_dir, "loss.png")))

        families = sorted({k[0] for k in warps})
        lams = sorted({k[1] for k in warps})
        eps = max(k[2] for k in warps)
        fig, axes = plt.subplots(
            len(families), len(lams), figsize=size(1.2, len(families) / len(lams)), squeeze=False
        )
        for i, fam in enumerate(families):
            for j, lam in enumerate(lams):
                ax = axes[i][j]
                U, P = warps[(fam, lam, eps)]
                n = int(round(math.sqrt(len(P))))
                G = P.reshape(n, n, 2)
                for k in range(n):
                    ax.plot(G[k, :, 0], G[k, :, 1], color="#1b6ca8", lw=0.5)
                    ax.plot(G[:, k, 0], G[:, k, 1], color="#1b6ca8", lw=0.5)
                _box(ax, lower, upper)
                ax.set_aspect("equal")
                ax.set_xticks([])
                ax.set_yticks([])
                ax.set_title(f"{fam}, $\\lambda$={lam:g}, $\\varepsilon$={eps:g}")
        paths.append(_save(fig, os.path.join(out_dir, "warp.png")))
    return paths


def training_figure(path, rows, aux_name: str) -> str:
    rows = np.asarray(rows, dtype=np.float64)
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=size(1.2, 0.4))
        a1.plot(rows[:, 0], rows[:, 1], lw=0.8)
        a1.set_xlabel("step")
        a1.set_ylabel("loss")
        a2.plot(rows[:, 0], rows[:, 3], lw=0.8, color="#c0392b")
        a2.set_xlabel("step")
        a2.set_ylabel(aux_name)
        return _save(fig, path)


def sweep_figure(path, agg_rows, metrics) -> str:
    """Bar chart of mean +- std across seeds for each requested metric."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=size(0.6 * len(metrics), 0.9 / len(metrics)), squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            rows = [r for r in agg_rows if r[2] == metric]
            names = [r[0] for r in rows]
            ax.bar(
                range(len(rows)),
                [r[3] for r in rows],
                yerr=[r[4] for r in rows],
                color=[COLORS.get(n, "#555555") for n in names],
                capsize=3,
            )
            ax.set_xticks(range(len(rows)))
            ax.set_xticklabels(names, rotation=30, ha="right")
            ax.set_title(metric)
        return _save(fig, path)
