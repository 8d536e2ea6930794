"""Late fusion of the two branch probabilities, the decision rule, and metrics.

The fused probability is the convex combination w * cnn + (1 - w) * forest.
Classification is strictly "positive iff p[positive] > 0.5": an exact 0.5
classifies negative.  AUC uses the Mann-Whitney pair formulation (ties count
half), computed by rank sums.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

WEIGHT_GRID = tuple(k / 20.0 for k in range(21))


def fuse(probs_a: np.ndarray, probs_b: np.ndarray, weight: float) -> np.ndarray:
    """Componentwise convex combination: weight on the first branch."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("fusion weight must be in [0, 1]")
    return weight * np.asarray(probs_a, dtype=np.float64) + (1.0 - weight) * np.asarray(
        probs_b, dtype=np.float64
    )


def classify(probs: np.ndarray) -> int:
    """1 iff the positive-class probability strictly exceeds 0.5, else 0."""
    return 1 if probs[1] > 0.5 else 0


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative,
    with ties counted 0.5.  Requires both classes present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires both classes present")
    ranks = rankdata(scores)  # average ranks on ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalReport:
    n: int
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    sensitivity: float  # nan when no positives
    specificity: float  # nan when no negatives
    auc: float  # nan when a class is missing

    def to_text(self) -> str:
        lines = [f"n = {self.n}"]
        for name in ("tp", "fp", "tn", "fn"):
            lines.append(f"{name} = {getattr(self, name)}")
        for name in ("accuracy", "sensitivity", "specificity", "auc"):
            v = getattr(self, name)
            lines.append(f"{name} = {'n/a' if np.isnan(v) else format(v, '.10g')}")
        return "\n".join(lines) + "\n"

    CSV_HEADER = "n,tp,fp,tn,fn,accuracy,sensitivity,specificity,auc"

    def to_csv_row(self) -> str:
        rates = [
            "n/a" if np.isnan(v) else format(v, ".10g")
            for v in (self.accuracy, self.sensitivity, self.specificity, self.auc)
        ]
        return ",".join([str(self.n), str(self.tp), str(self.fp), str(self.tn), str(self.fn)] + rates)


def evaluate(preds, labels) -> EvalReport:
    """Confusion counts and rates for a list of probability vectors against
    binary labels.  Rates undefined for a missing class are reported as nan
    (serialized "n/a"); the confusion counts are always populated."""
    preds = list(preds)
    labels = np.asarray(labels)
    if len(preds) != labels.size:
        raise ValueError("predictions and labels differ in length")
    if labels.size == 0:
        raise ValueError("nothing to evaluate")
    hard = np.array([classify(p) for p in preds])
    tp = int(((hard == 1) & (labels == 1)).sum())
    fp = int(((hard == 1) & (labels == 0)).sum())
    tn = int(((hard == 0) & (labels == 0)).sum())
    fn = int(((hard == 0) & (labels == 1)).sum())
    n = labels.size
    accuracy = (tp + tn) / n
    sensitivity = tp / (tp + fn) if (tp + fn) else float("nan")
    specificity = tn / (tn + fp) if (tn + fp) else float("nan")
    try:
        area = auc([p[1] for p in preds], labels)
    except ValueError:
        area = float("nan")
    return EvalReport(int(n), tp, fp, tn, fn, accuracy, sensitivity, specificity, area)


def tune_weight(val_preds_a, val_preds_b, labels) -> float:
    """Grid-search the fusion weight on a validation set, maximizing AUC of
    the fused positive-class score over w in {0, 0.05, ..., 1}.  Ties pick
    the weight closest to 0.5, then the smaller weight."""
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise ValueError("weight tuning requires both classes in the validation set")
    a = np.asarray([p[1] for p in val_preds_a], dtype=np.float64)
    b = np.asarray([p[1] for p in val_preds_b], dtype=np.float64)
    best_k, best_auc = 0, -1.0
    for k, w in enumerate(WEIGHT_GRID):
        area = auc(w * a + (1.0 - w) * b, labels)
        if area > best_auc or (
            area == best_auc
            and (abs(k - 10), k) < (abs(best_k - 10), best_k)
        ):
            best_k, best_auc = k, area
    return WEIGHT_GRID[best_k]
