"""Figure rendering for training and evaluation reports.

Figures are written next to the delimited metrics output so a run
directory is self-describing without re-running anything.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_miou_trace(records, path) -> Path:
    """Selection trace: mIoU (all/base/novel) per evaluation epoch, with
    markers where a new best model was installed."""
    path = Path(path)
    epochs = [r["epoch"] for r in records]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(epochs, [r["miou_all"] for r in records], "-o", ms=3, label="mIoU all")
    ax.plot(epochs, [r["miou_base"] for r in records], "-s", ms=3, label="mIoU base")
    ax.plot(epochs, [r["miou_novel"] for r in records], "-^", ms=3, label="mIoU novel")
    best_e = [r["epoch"] for r in records if r["best_flag"]]
    best_v = [r["miou_all"] for r in records if r["best_flag"]]
    if best_e:
        ax.scatter(best_e, best_v, marker="*", s=110, zorder=5, color="crimson",
                   label="new best")
    ax.set_xlabel("epoch")
    ax.set_ylabel("pseudo-validation mIoU")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_per_class_iou(class_names, ious, path) -> Path:
    """Bar chart of per-class IoU; undefined classes are hatched at zero."""
    path = Path(path)
    ious = np.asarray(ious, dtype=float)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(class_names) + 1.5), 3.4))
    xs = np.arange(len(class_names))
    vals = np.where(np.isnan(ious), 0.0, ious)
    colors = ["tab:gray" if np.isnan(v) else "tab:blue" for v in ious]
    hatches = ["//" if np.isnan(v) else "" for v in ious]
    bars = ax.bar(xs, vals, color=colors)
    for bar, h in zip(bars, hatches):
        bar.set_hatch(h)
    for x, v in zip(xs, ious):
        txt = "n/a" if np.isnan(v) else f"{v:.3f}"
        ax.text(x, (0.0 if np.isnan(v) else v) + 0.02, txt, ha="center", fontsize=8)
    ax.set_xticks(xs)
    ax.set_xticklabels(class_names, rotation=20, ha="right")
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1.1)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
