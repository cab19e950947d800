"""Matplotlib figures written next to the CSV/JSON reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 6.0

MODE_COLORS = {"full": "#08589e", "refresh": "#4eb3d3", "skip": "#ccebc5"}

params = {
    "font.family": "sans-serif",
    "font.sans-serif": ["DejaVu Sans"],
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
    "figure.dpi": 120,
    "savefig.dpi": 120,
}

# keeps PNG bytes independent of the matplotlib version string
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=_META, bbox_inches="tight")
    plt.close(fig)


def plot_u_curve(increments, cosines, path, title="step-to-step change of the net delta"):
    """Relative L1 change (left axis) and cosine (right axis) per step."""
    steps = np.arange(2, len(increments) + 2)
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(fig_width, fig_width * golden_mean))
        ax.plot(steps, increments, "o-", color="#2b8cbe", label="relative L1")
        ax.set_xlabel("reverse step")
        ax.set_ylabel("relative L1 change")
        ax.set_title(title)
        cos = np.asarray(cosines, dtype=float)
        if np.isfinite(cos).any():
            ax2 = ax.twinx()
            ax2.plot(steps, cos, "s--", color="#e34a33", label="cosine")
            ax2.set_ylabel("cosine")
            ax2.spines["right"].set_visible(True)
        _save(fig, path)


def plot_run(report, path, delta_warn=None, delta_crit=None):
    """Controller error with threshold lines over a mode strip, plus FLOPs per step."""
    rows = report.curve
    steps = np.array([r["step"] for r in rows])
    err = np.array([np.nan if r["err"] is None else r["err"] for r in rows], dtype=float)
    flops = np.array([r["step_flops"] for r in rows], dtype=float)
    with plt.rc_context(params):
        fig, (ax, axf) = plt.subplots(2, 1, sharex=True, figsize=(fig_width, fig_width * 0.75),
                                      gridspec_kw={"height_ratios": [2, 1]})
        for r in rows:
            ax.axvspan(r["step"] - 0.5, r["step"] + 0.5, color=MODE_COLORS[r["mode"]], alpha=0.6, lw=0)
        if np.isfinite(err).any():
            ax.plot(steps, err, "k.-", label="accumulated error")
        if delta_warn is not None:
            ax.axhline(delta_warn, color="#fd8d3c", ls="--", label="warn line")
        if delta_crit is not None:
            ax.axhline(delta_crit, color="#bd0026", ls="--", label="critical line")
        ax.set_ylabel("reuse error")
        ax.set_title(f"{report.method} seed {report.seed}: speedup {report.speedup:.2f}x, "
                     f"rel-L1 {report.rel_l1:.4f}")
        handles, labels = ax.get_legend_handles_labels()
        for mode, color in MODE_COLORS.items():
            handles.append(plt.Rectangle((0, 0), 1, 1, color=color, alpha=0.6))
            labels.append(mode)
        ax.legend(handles, labels, ncol=1, loc="upper left", bbox_to_anchor=(1.01, 1.0), frameon=False)
        axf.bar(steps, flops, color="#2b8cbe")
        axf.set_ylabel("FLOPs")
        axf.set_xlabel("reverse step")
        _save(fig, path)


def plot_sweep(rows, axis, path):
    """Seed-averaged speedup and relative L1 against the swept knob."""
    mean_rows = [r for r in rows if r["seed"] == "mean"]
    labels = [str(r["value"]) for r in mean_rows]
    x = np.arange(len(mean_rows))
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(fig_width, fig_width * golden_mean))
        ax.plot(x, [r["speedup"] for r in mean_rows], "o-", color="#2b8cbe", label="speedup")
        ax.set_ylabel("speedup (FLOPs)")
        ax.set_xticks(x)
        ax.set_xticklabels(labels)
        ax.set_xlabel(axis)
        ax2 = ax.twinx()
        ax2.plot(x, [r["rel_l1"] for r in mean_rows], "s--", color="#e34a33", label="relative L1")
        ax2.set_ylabel("final relative L1")
        ax2.spines["right"].set_visible(True)
        fig.legend(loc="upper center", ncol=2, frameon=False)
        _save(fig, path)
