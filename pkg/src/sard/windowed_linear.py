"""Windowed multi-hot features and the L1-regularized logistic regression teacher."""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autograd import sigmoid_np
from .evaluation import auc_roc

WINDOW_CANDIDATES = (15, 30, 60, 90, 180, 360, 540, 720, math.inf)
WIDE_LAMBDA_GRID = (20, 2, 0.2, 0.02, 0.002, 0.0002)
PROB_EPS = 1e-7


@dataclass(frozen=True)
class WindowSet:
    """Look-back windows [T_A - offset, T_A]; ``math.inf`` means all history."""

    offsets: tuple

    def __post_init__(self):
        offsets = tuple(math.inf if o is None or o == math.inf else int(o) for o in self.offsets)
        if not offsets:
            raise ValueError("a WindowSet needs at least one window")
        if any(o <= 0 for o in offsets):
            raise ValueError(f"window offsets must be positive, got {offsets}")
        if any(a >= b for a, b in zip(offsets, offsets[1:])):
            raise ValueError(f"window offsets must be strictly increasing, got {offsets}")
        object.__setattr__(self, "offsets", offsets)

    def __len__(self):
        return len(self.offsets)

    def to_json(self):
        return [None if o == math.inf else o for o in self.offsets]

    def label(self, i):
        o = self.offsets[i]
        return "inf" if o == math.inf else str(o)


def featurize(patient, window_set, vocab, prediction_day):
    """Binary vector of length n_windows * |vocab|, blocked by window."""
    n_codes = len(vocab)
    x = np.zeros(len(window_set) * n_codes)
    for visit in patient.visits:
        age = prediction_day - visit.day
        if age < 0:
            raise ValueError(f"patient {patient.patient_id}: visit after prediction day")
        try:
            cols = vocab.indices(visit.codes)
        except KeyError as exc:
            raise ValueError(f"patient {patient.patient_id}: code {exc} not in vocabulary") from exc
        for w, offset in enumerate(window_set.offsets):
            if age <= offset:
                x[[w * n_codes + c for c in cols]] = 1.0
    return x


def featurize_cohort(cohort, window_set):
    return np.stack([featurize(r, window_set, cohort.vocab, cohort.prediction_day) for r in cohort.records])


def feature_names(window_set, vocab):
    return [f"{code}@{window_set.label(w)}" for w in range(len(window_set)) for code in vocab.codes]


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float
    lam: float
    window_set: WindowSet | None = None
    converged: bool = True
    n_iter: int = 0
    objective_trace: list = field(default_factory=list, repr=False)

    @property
    def nonzero(self):
        return np.flatnonzero(self.weights)

    def decision_function(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights.size:
            raise ValueError(f"feature dimension {X.shape[1]} != model dimension {self.weights.size}")
        return X @ self.weights + self.intercept

    def predict_proba(self, X):
        return sigmoid_np(self.decision_function(X))

    def to_json(self):
        return {
            "lambda": self.lam,
            "intercept": self.intercept,
            "window_offsets": None if self.window_set is None else self.window_set.to_json(),
            "n_features": int(self.weights.size),
            "nonzero": [[int(i), float(self.weights[i])] for i in self.nonzero],
        }

    @classmethod
    def from_json(cls, obj):
        w = np.zeros(int(obj["n_features"]))
        for i, v in obj["nonzero"]:
            w[int(i)] = v
        ws = None if obj.get("window_offsets") is None else WindowSet(obj["window_offsets"])
        return cls(w, float(obj["intercept"]), float(obj["lambda"]), ws)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def predict_linear(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.weights.size:
        raise ValueError(f"feature dimension {x.shape[-1]} != model dimension {model.weights.size}")
    return sigmoid_np(x @ model.weights + model.intercept)


def logistic_objective(X, y, w, b, lam):
    """Mean logistic loss plus (1/lam) * ||w||_1 (intercept unpenalized)."""
    z = X @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = np.logaddexp(0.0, z) - y * z
    return loss.mean() + np.abs(w).sum() / lam


def _smooth_part(X, y, w, b):
    z = X @ w + b
    loss = (np.logaddexp(0.0, z) - y * z).mean()
    r = (sigmoid_np(z) - y) / y.size
    return loss, X.T @ r, r.sum()


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def train_l1_logreg(X, y, lam, tol=1e-9, max_iter=5000, window_set=None):
    """Proximal gradient (ISTA with backtracking) on the L1-penalized logistic loss.

    Each accepted step satisfies the sufficient-decrease bound, so the
    objective never increases.  Stops when the decrease falls below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X rows must match y")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite inputs")

    penalty = 1.0 / lam
    w = np.zeros(X.shape[1])
    p0 = np.clip(y.mean(), PROB_EPS, 1 - PROB_EPS)
    b = math.log(p0 / (1 - p0))
    step = 1.0
    loss, gw, gb = _smooth_part(X, y, w, b)
    obj = loss + penalty * np.abs(w).sum()
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        while True:
            w_new = soft_threshold(w - step * gw, step * penalty)
            b_new = b - step * gb
            loss_new, gw_new, gb_new = _smooth_part(X, y, w_new, b_new)
            dw, db = w_new - w, b_new - b
            bound = loss + gw @ dw + gb * db + (dw @ dw + db * db) / (2 * step)
            if loss_new <= bound + 1e-15:
                break
            step *= 0.5
        obj_new = loss_new + penalty * np.abs(w_new).sum()
        decrease = obj - obj_new
        w, b, loss, gw, gb, obj = w_new, b_new, loss_new, gw_new, gb_new, obj_new
        trace.append(obj)
        if decrease < tol:
            converged = True
            break
        step *= 1.25
    if not converged:
        warnings.warn(f"train_l1_logreg: no convergence after {max_iter} iterations", RuntimeWarning)
    return LinearModel(w, float(b), float(lam), window_set, converged, it, trace)


def fit_best_lambda(X_train, y_train, X_val, y_val, lambda_grid, **kw):
    """Train one model per lambda; keep the best validation AUC (first wins ties)."""
    best = None
    for lam in lambda_grid:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            model = train_l1_logreg(X_train, y_train, lam, **kw)
        auc = auc_roc(model.decision_function(X_val), y_val)
        if best is None or auc > best[1]:
            best = (model, auc)
    return best


def select_windows(candidates, n_windows, train, val, lambda_grid, **kw):
    """Exhaustive search over all size-``n_windows`` subsets of the candidate offsets.

    Returns ``(WindowSet, LinearModel, val_auc)``.  Subsets are visited in
    lexicographic order and only a strictly better AUC replaces the incumbent,
    so ties go to the lexicographically smallest offset tuple.
    """
    offsets = sorted(math.inf if o is None else o for o in candidates)
    if not 1 <= n_windows <= len(offsets):
        raise ValueError(f"cannot choose {n_windows} windows from {len(offsets)} candidates")
    # a subset's features are the concatenation of its single-window blocks
    blocks = {o: (featurize_cohort(train, WindowSet((o,))), featurize_cohort(val, WindowSet((o,)))) for o in offsets}
    best = None
    y_train, y_val = train.labels, val.labels
    for subset in itertools.combinations(offsets, n_windows):
        ws = WindowSet(subset)
        Xt = np.hstack([blocks[o][0] for o in subset])
        Xv = np.hstack([blocks[o][1] for o in subset])
        model, auc = fit_best_lambda(Xt, y_train, Xv, y_val, lambda_grid, **kw)
        if best is None or auc > best[2]:
            model.window_set = ws
            best = (ws, model, auc)
    return best
