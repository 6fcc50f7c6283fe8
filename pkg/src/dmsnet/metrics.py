"""Evaluation scores for the 8-class paired-image task.

Conventions, applied consistently and recorded in the report:
per-class precision/recall/F1 define 0/0 as 0, and a class absent from
both predictions and truths therefore contributes 0 to the macro mean;
AUC uses the pairwise (rank) formulation with ties counted 0.5, is
macro-averaged over the classes where it is defined, and classes with
no positives or no negatives are excluded and listed in the report.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError


def confusion_matrix(pred_classes, true_classes, num_classes=8):
    """Count matrix with entry (i, j) = samples of true class i predicted j."""
    preds = np.asarray(pred_classes, dtype=np.int64)
    truths = np.asarray(true_classes, dtype=np.int64)
    if preds.shape != truths.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {truths.shape}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    if preds.size:
        if preds.min() < 0 or preds.max() >= num_classes:
            raise ValueError("predicted class id out of range")
        if truths.min() < 0 or truths.max() >= num_classes:
            raise ValueError("true class id out of range")
        np.add.at(cm, (truths, preds), 1)
    return cm


def per_class_scores(cm):
    """Per-class (precision, recall, f1) arrays with the 0/0 -> 0 rule."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred_totals = cm.sum(axis=0)
    true_totals = cm.sum(axis=1)
    precision = np.divide(tp, pred_totals, out=np.zeros_like(tp), where=pred_totals > 0)
    recall = np.divide(tp, true_totals, out=np.zeros_like(tp), where=true_totals > 0)
    pr_sum = precision + recall
    f1 = np.divide(2 * precision * recall, pr_sum,
                   out=np.zeros_like(tp), where=pr_sum > 0)
    return precision, recall, f1


def classification_scores(cm):
    """(accuracy, precision_macro, recall_macro, f1_macro) from a count matrix."""
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise UndefinedMetricError("all-zero confusion matrix: no samples to score")
    precision, recall, f1 = per_class_scores(cm)
    accuracy = np.trace(cm) / total
    return float(accuracy), float(precision.mean()), float(recall.mean()), float(f1.mean())


def cohen_kappa(cm):
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e) in [-1, 1]."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise UndefinedMetricError("kappa needs at least one sample")
    p_observed = np.trace(cm) / total
    p_expected = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / total**2
    if p_expected == 1.0:
        return 1.0 if p_observed == 1.0 else 0.0
    return float((p_observed - p_expected) / (1.0 - p_expected))


def auc_binary(scores, positives):
    """One-vs-rest AUC via average ranks (equal to the pairwise count
    with ties worth 0.5); None when a side is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = int(positives.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    rank_sum = ranks[positives].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc_per_class(scores, truths):
    """Per-class one-vs-rest AUCs; None marks an undefined class."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths)
    if scores.shape != truths.shape:
        raise ValueError(f"shape mismatch: {scores.shape} vs {truths.shape}")
    return [auc_binary(scores[:, c], truths[:, c] == 1)
            for c in range(scores.shape[1])]


def auc_macro(scores, truths):
    """Unweighted mean of the defined per-class AUCs."""
    per_class = auc_per_class(scores, truths)
    defined = [a for a in per_class if a is not None]
    if not defined:
        raise UndefinedMetricError("no class has both positives and negatives")
    return float(np.mean(defined))


def roc_points(scores, positives):
    """(fpr, tpr) arrays over the unique decision thresholds, for plots."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    sorted_pos = positives[order].astype(np.float64)
    sorted_scores = scores[order]
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1.0 - sorted_pos)
    # keep only the last index of each tied score group
    keep = np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    tp, fp = tp[keep], fp[keep]
    n_pos, n_neg = positives.sum(), (~positives).sum()
    tpr = np.concatenate([[0.0], tp / max(n_pos, 1)])
    fpr = np.concatenate([[0.0], fp / max(n_neg, 1)])
    return fpr, tpr


@dataclass
class MetricsReport:
    """All six scores plus the confusion matrix and per-class detail.

    ``auc_macro`` may be None on degenerate evaluations where no class
    has both positives and negatives (serialized as null).
    """

    accuracy: float
    precision_macro: float
    recall_macro: float
    kappa: float
    f1_macro: float
    auc_macro: float | None
    confusion: list
    per_class: dict
    n_samples: int

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "precision_macro": self.precision_macro,
            "recall_macro": self.recall_macro,
            "kappa": self.kappa,
            "f1_macro": self.f1_macro,
            "auc_macro": self.auc_macro,
            "confusion": self.confusion,
            "per_class": self.per_class,
            "n_samples": self.n_samples,
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent)


def evaluate_predictions(scores, labels, mode="multiclass", require_auc=True):
    """Build a report from per-class scores and indicator labels.

    multiclass: predictions are score argmaxes and all matrix-derived
    metrics follow. multilabel: accuracy is the exact-match ratio and
    precision/recall/F1 are macro over per-class binary decisions at
    threshold 0.5; the confusion matrix and kappa are still computed on
    argmaxes (a documented convention for the report's fixed schema).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"shape mismatch: {scores.shape} vs {labels.shape}")
    n_samples, num_classes = scores.shape

    preds = scores.argmax(axis=1)
    truths = labels.argmax(axis=1)
    cm = confusion_matrix(preds, truths, num_classes)

    if mode == "multiclass":
        accuracy, precision_macro, recall_macro, f1_macro = classification_scores(cm)
        precision, recall, f1 = per_class_scores(cm)
    else:
        decisions = (scores >= 0.5).astype(np.int64)
        accuracy = float((decisions == labels).all(axis=1).mean())
        precision = np.zeros(num_classes)
        recall = np.zeros(num_classes)
        f1 = np.zeros(num_classes)
        for c in range(num_classes):
            tp = float(((decisions[:, c] == 1) & (labels[:, c] == 1)).sum())
            pp = float((decisions[:, c] == 1).sum())
            ap = float((labels[:, c] == 1).sum())
            precision[c] = tp / pp if pp else 0.0
            recall[c] = tp / ap if ap else 0.0
            f1[c] = (2 * precision[c] * recall[c] / (precision[c] + recall[c])
                     if precision[c] + recall[c] else 0.0)
        precision_macro = float(precision.mean())
        recall_macro = float(recall.mean())
        f1_macro = float(f1.mean())

    kappa = cohen_kappa(cm)
    aucs = auc_per_class(scores, labels)
    defined = [a for a in aucs if a is not None]
    if not defined and require_auc:
        raise UndefinedMetricError("no class has both positives and negatives")
    macro_auc = float(np.mean(defined)) if defined else None
    excluded = [c for c, a in enumerate(aucs) if a is None]

    return MetricsReport(
        accuracy=float(accuracy),
        precision_macro=precision_macro,
        recall_macro=recall_macro,
        kappa=kappa,
        f1_macro=f1_macro,
        auc_macro=macro_auc,
        confusion=cm.tolist(),
        per_class={
            "precision": precision.tolist(),
            "recall": recall.tolist(),
            "f1": f1.tolist(),
            "auc": aucs,
            "auc_excluded": excluded,
        },
        n_samples=int(n_samples),
    )
