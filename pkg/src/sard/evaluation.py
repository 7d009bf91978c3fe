"""Rank metrics and tests: AUC-ROC, AUC-PRC, DeLong, Spearman, Mann-Whitney, PPV, MCC.

Ties are handled with average (mid) ranks everywhere.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, rankdata


def _check_scored(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores ({scores.size}) and labels ({labels.size}) differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    labels = labels.astype(bool)
    if labels.all() or not labels.any():
        raise ValueError("need at least one positive and one negative label")
    return scores, labels


def auc_roc(scores, labels):
    """P(score_pos > score_neg) + 0.5 P(tie), from the positive-class rank sum."""
    scores, labels = _check_scored(scores, labels)
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc_prc(scores, labels):
    """Average precision: sum over distinct thresholds of (delta recall) * precision."""
    scores, labels = _check_scored(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each block of tied scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _pr_points(scores, labels):
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    return s[last], tp / (tp + fp), tp / y.sum()


def ppv_at_sensitivity(scores, labels, sensitivity=0.5):
    """Precision at the highest threshold whose recall reaches ``sensitivity``."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not labels.any():
        raise ValueError("ppv_at_sensitivity needs at least one positive")
    if not 0 < sensitivity <= 1:
        raise ValueError("sensitivity must be in (0, 1]")
    thresholds, precision, recall = _pr_points(scores, labels)
    ok = np.flatnonzero(recall >= sensitivity - 1e-12)
    if ok.size == 0:
        raise ValueError(f"sensitivity {sensitivity} unreachable")
    return float(precision[ok[0]])


def _placements(scores, labels):
    # structural components of the Mann-Whitney AUC estimate (Sun & Xu mid-rank form)
    pos, neg = scores[labels], scores[~labels]
    m, n = pos.size, neg.size
    r_all = rankdata(np.r_[pos, neg])
    r_pos = rankdata(pos)
    r_neg = rankdata(neg)
    v10 = (r_all[:m] - r_pos) / n
    v01 = 1.0 - (r_all[m:] - r_neg) / m
    return v10, v01


@dataclass(frozen=True)
class DeLongResult:
    auc_a: float
    auc_b: float
    z: float
    p: float


def delong_test(scores_a, scores_b, labels):
    """Paired two-sided z-test for AUC(a) - AUC(b) with DeLong's covariance."""
    a, lab = _check_scored(scores_a, labels)
    b, _ = _check_scored(scores_b, labels)
    v10a, v01a = _placements(a, lab)
    v10b, v01b = _placements(b, lab)
    auc_a, auc_b = v10a.mean(), v10b.mean()
    m, n = v10a.size, v01a.size
    s10 = np.cov(np.vstack([v10a, v10b]))
    s01 = np.cov(np.vstack([v01a, v01b]))
    s = s10 / m + s01 / n
    var = s[0, 0] + s[1, 1] - 2 * s[0, 1]
    diff = auc_a - auc_b
    if var <= 1e-300:
        z = 0.0 if abs(diff) < 1e-15 else math.copysign(math.inf, diff)
    else:
        z = diff / math.sqrt(var)
    p = float(2 * norm.sf(abs(z)))
    return DeLongResult(float(auc_a), float(auc_b), float(z), p)


def _snap(x, tol):
    # values closer than ``tol`` to their sorted neighbour share the group minimum
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.r_[True, np.diff(xs) > tol]
    out = np.empty_like(x)
    out[order] = xs[starts][np.cumsum(starts) - 1]
    return out


def spearman(x, y, tie_tol=0.0):
    """Pearson correlation of average ranks.

    With ``tie_tol > 0`` values within ``tie_tol`` of their sorted neighbour
    are treated as tied, so round-off cannot order genuinely equal scores.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 3:
        raise ValueError("spearman needs two equal-length vectors of length >= 3")
    if tie_tol > 0:
        x, y = _snap(x, tie_tol), _snap(y, tie_tol)
    rx = rankdata(x) - (x.size + 1) / 2
    ry = rankdata(y) - (y.size + 1) / 2
    denom = math.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0:
        return 0.0
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    p: float


def mann_whitney(a, b):
    """U counts pairs with a_i > b_j (ties count 1/2); two-sided normal approximation.

    U == 0 when every a is below every b.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("mann_whitney needs two non-empty samples")
    n1, n2 = a.size, b.size
    pooled = np.r_[a, b]
    ranks = rankdata(pooled)
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2
    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = (counts ** 3 - counts).sum() / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return MannWhitneyResult(float(u), 1.0)
    z = (u - n1 * n2 / 2.0) / math.sqrt(var)
    return MannWhitneyResult(float(u), float(min(1.0, 2 * norm.sf(abs(z)))))


def mcc(a, b):
    """Matthews correlation of two binary vectors; 0 when any marginal is constant."""
    a = np.asarray(a).ravel().astype(bool)
    b = np.asarray(b).ravel().astype(bool)
    if a.shape != b.shape:
        raise ValueError("mcc needs equal-length vectors")
    tp = float(np.sum(a & b))
    tn = float(np.sum(~a & ~b))
    fp = float(np.sum(~a & b))
    fn = float(np.sum(a & ~b))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def mcc_matrix(A, B):
    """MCC between every column of binary ``A`` (n x p) and of ``B`` (n x q)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    n = A.shape[0]
    pa, pb = A.mean(0), B.mean(0)
    cov = A.T @ B / n - np.outer(pa, pb)
    sd = np.outer(np.sqrt(pa * (1 - pa)), np.sqrt(pb * (1 - pb)))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sd > 0, cov / np.where(sd > 0, sd, 1.0), 0.0)
    return np.clip(out, -1.0, 1.0)


def logit(p, eps=1e-12):
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    return np.log(p) - np.log1p(-p)


@dataclass
class MetricReport:
    values: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self, path=None):
        obj = {"values": self.values, "meta": self.meta}
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(obj, fh, indent=1)
        return obj

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k, v in self.values.items():
                w.writerow([k, v])


def score_report(scores, labels, name="model"):
    scores, lab = _check_scored(scores, labels)
    return MetricReport(
        {"auc_roc": auc_roc(scores, lab), "auc_prc": auc_prc(scores, lab)},
        {"model": name, "n": int(lab.size), "prevalence": float(lab.mean())},
    )
