"""Evaluation figures: confusion-matrix heatmap and per-class ROC curves."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import roc_points
from .model import CLASS_NAMES


def save_confusion_heatmap(cm, path):
    cm = np.asarray(cm)
    fig, ax = plt.subplots(figsize=(6, 5))
    image = ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(CLASS_NAMES)), CLASS_NAMES)
    ax.set_yticks(range(len(CLASS_NAMES)), CLASS_NAMES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=8)
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_roc_curves(scores, truths, out_dir, prefix="roc"):
    """One ROC image per class that has both positives and negatives.

    Returns the list of written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores = np.asarray(scores)
    truths = np.asarray(truths)
    written = []
    for c, name in enumerate(CLASS_NAMES[:scores.shape[1]]):
        positives = truths[:, c] == 1
        if positives.all() or not positives.any():
            continue
        fpr, tpr = roc_points(scores[:, c], positives)
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot(fpr, tpr, drawstyle="steps-post")
        ax.plot([0, 1], [0, 1], linestyle="--", linewidth=0.8, color="gray")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title(f"class {name}")
        fig.tight_layout()
        path = out_dir / f"{prefix}_{name}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
