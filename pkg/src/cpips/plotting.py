"""Figures written next to the CSV reports of ``bench`` and ``eval-2afc``."""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def figure_path(csv_path):
    return os.path.splitext(csv_path)[0] + ".png"


def _new(width=4.5, height=3.0):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def _save(fig, path):
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path)
    plt.close(fig)
    return path


def plot_bench(report, path):
    """Bar chart of mean wall time per pipeline, log scale, with stddev whiskers."""
    names = list(report["methods"])
    means = [report["methods"][n]["mean_s"] for n in names]
    stds = [report["methods"][n]["std_s"] for n in names]
    fig, ax = _new()
    ax.bar(names, means, yerr=stds, color=["#1b9e77", "#7570b3", "#d95f02"][:len(names)],
           capsize=3)
    ax.set_yscale("log")
    ax.set_ylabel("seconds per pair")
    ratio = report["speedup"].get("full_over_bitstream")
    if ratio is not None:
        ax.set_title(f"full / bitstream = {ratio:.2f}x")
    return _save(fig, path)


def plot_2afc(d0, d1, h, path):
    """Scatter of (d0, d1) coloured by the human preference h."""
    d0, d1, h = (np.asarray(v, dtype=float) for v in (d0, d1, h))
    fig, ax = _new(3.6, 3.4)
    sc = ax.scatter(d0, d1, c=h, cmap="coolwarm", vmin=0, vmax=1, s=6)
    hi = max(d0.max(initial=0), d1.max(initial=0)) * 1.05 or 1.0
    ax.plot([0, hi], [0, hi], color="0.5", lw=0.8, ls="--")
    ax.set_xlabel("d0 (ref vs p0)")
    ax.set_ylabel("d1 (ref vs p1)")
    fig.colorbar(sc, ax=ax, label="h")
    return _save(fig, path)


def plot_training(records, path, keys=("total", "rate", "distortion", "classification",
                                       "regularization")):
    steps = [r["step"] for r in records]
    fig, ax = _new()
    for k in keys:
        ax.plot(steps, [r[k] for r in records], lw=0.8, label=k)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.legend(frameon=False)
    return _save(fig, path)
