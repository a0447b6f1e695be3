"""Figures written next to the CSV reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams.update(
    {
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "savefig.dpi": 120,
        "svg.hashsalt": "fcarac",
    }
)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_density(path, values, gt_first=None, title="", count=None, gt_count=None):
    """Predicted per-frame density, with the first-cycle target overlaid."""
    values = np.asarray(values)
    fig, ax = plt.subplots(figsize=(6, 2.4))
    ax.bar(np.arange(values.size), values, width=0.9, color="tab:blue", label="predicted")
    if gt_first is not None:
        gt_first = np.asarray(gt_first)
        ax.plot(np.arange(gt_first.size), gt_first, "o-", color="tab:orange", ms=3, label="first-cycle target")
    label = title
    if count is not None:
        label += f"  pred={count:.2f}"
    if gt_count is not None:
        label += f"  gt={gt_count}"
    ax.set_title(label.strip())
    ax.set_xlabel("sampled frame")
    ax.set_ylabel("density")
    ax.legend(frameon=False, loc="upper right")
    _save(fig, path)


def plot_k_sweep(path, Ks, maes, obos):
    fig, ax1 = plt.subplots(figsize=(4, 2.8))
    ax1.plot(Ks, maes, "o-", color="tab:blue")
    ax1.set_xlabel("retrieved kernels K")
    ax1.set_ylabel("MAE", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(Ks, obos, "s--", color="tab:red")
    ax2.set_ylabel("OBO", color="tab:red")
    ax2.spines["right"].set_visible(True)
    _save(fig, path)


def plot_count_scatter(path, gts, preds):
    gts, preds = np.asarray(gts), np.asarray(preds)
    fig, ax = plt.subplots(figsize=(3.2, 3.2))
    hi = max(gts.max(), preds.max(), 1) + 1
    ax.fill_between([0, hi], [-1, hi - 1], [1, hi + 1], color="0.9", label="within one")
    ax.plot([0, hi], [0, hi], color="0.5", lw=0.8)
    ax.scatter(gts, preds, s=10)
    ax.set_xlim(0, hi)
    ax.set_ylim(0, hi)
    ax.set_xlabel("ground-truth count")
    ax.set_ylabel("predicted count")
    _save(fig, path)
