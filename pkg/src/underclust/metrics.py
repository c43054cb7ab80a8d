"""Clustering evaluation: pairwise P/R/F1, NMI, purity, per-cluster quality.

Pairwise counts come from the contingency table rather than explicit pair
enumeration; the test suite checks them against a brute-force all-pairs
oracle. Conventions for empty denominators: 0/0 -> 0 throughout, and NMI is
0 whenever either labeling has zero entropy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    nmi: float
    purity: float
    per_cluster_acc: list = field(default_factory=list)
    ave_acc: float = 0.0
    min_acc: float = 0.0
    fpp: float = 0.0
    lpp: float = 0.0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "nmi": self.nmi,
            "purity": self.purity,
            "ave_acc": self.ave_acc,
            "min_acc": self.min_acc,
            "fpp": self.fpp,
            "lpp": self.lpp,
            "per_cluster_acc": list(self.per_cluster_acc),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _as_codes(seq) -> np.ndarray:
    arr = np.asarray(seq)
    _, codes = np.unique(arr, return_inverse=True)
    return codes


def _contingency(pred, truth) -> np.ndarray:
    p = _as_codes(pred)
    t = _as_codes(truth)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def _check_lengths(pred, truth) -> None:
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(truth)} truths")


def pairwise_prf(pred, truth) -> tuple[float, float, float]:
    """Pair-counting precision, recall and F1 over all unordered pairs.

    Precision = (pairs in the same cluster and same class) / (same-cluster
    pairs); recall uses same-class pairs as the denominator.
    """
    _check_lengths(pred, truth)
    if len(pred) < 2:
        raise ValueError("need at least 2 samples for pairwise metrics")
    table = _contingency(pred, truth)

    def pairs(counts: np.ndarray) -> int:
        c = counts.astype(np.int64)
        return int(np.sum(c * (c - 1) // 2))

    both = pairs(table.ravel())
    same_pred = pairs(table.sum(axis=1))
    same_truth = pairs(table.sum(axis=0))
    precision = both / same_pred if same_pred else 0.0
    recall = both / same_truth if same_truth else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def nmi(pred, truth) -> float:
    """Normalized mutual information, 2*I/(H(pred)+H(truth)), natural logs."""
    _check_lengths(pred, truth)
    table = _contingency(pred, truth).astype(np.float64)
    n = table.sum()
    pi = table.sum(axis=1) / n
    pj = table.sum(axis=0) / n
    h_pred = -np.sum(pi[pi > 0] * np.log(pi[pi > 0]))
    h_truth = -np.sum(pj[pj > 0] * np.log(pj[pj > 0]))
    if h_pred == 0.0 or h_truth == 0.0:
        return 0.0
    pij = table / n
    mask = pij > 0
    info = np.sum(pij[mask] * np.log(pij[mask] / np.outer(pi, pj)[mask]))
    return float(2.0 * info / (h_pred + h_truth))


def purity(pred, truth) -> float:
    """Fraction of samples covered by each cluster's majority class."""
    _check_lengths(pred, truth)
    table = _contingency(pred, truth)
    return float(table.max(axis=1).sum() / table.sum())


def per_cluster_quality(pred, truth):
    """Per-cluster majority fractions and their aggregates.

    Returns (acc list, AveAcc, MinAcc, FPP, LPP) where FPP is the fraction
    of perfectly pure clusters and LPP the fraction with accuracy strictly
    below 0.8.
    """
    _check_lengths(pred, truth)
    table = _contingency(pred, truth)
    sizes = table.sum(axis=1)
    if np.any(sizes == 0):
        raise ValueError("every predicted cluster must be non-empty")
    maj = table.max(axis=1)
    acc = maj / sizes
    h = acc.size
    ave_acc = float(acc.mean())
    min_acc = float(acc.min())
    fpp = float(np.count_nonzero(maj == sizes) / h)
    lpp = float(np.count_nonzero(acc < 0.8) / h)
    return [float(a) for a in acc], ave_acc, min_acc, fpp, lpp


def evaluate(pred, truth) -> MetricsReport:
    """Full report over one predicted clustering against ground truth."""
    p, r, f1 = pairwise_prf(pred, truth)
    acc, ave_acc, min_acc, fpp, lpp = per_cluster_quality(pred, truth)
    return MetricsReport(
        precision=p,
        recall=r,
        f1=f1,
        nmi=nmi(pred, truth),
        purity=purity(pred, truth),
        per_cluster_acc=acc,
        ave_acc=ave_acc,
        min_acc=min_acc,
        fpp=fpp,
        lpp=lpp,
    )
