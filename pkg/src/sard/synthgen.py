"""Synthetic data: Gaussian-cluster classification sets and planted claims cohorts."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import sigmoid_np
from .corpus import CodeVocab, Cohort, PatientRecord, Visit
from .windowed_linear import WindowSet, featurize, featurize_cohort


@dataclass(frozen=True)
class ClusterParams:
    K: int = 200
    gamma: float = 0.5
    rho: float = 0.05
    beta: float = 0.02
    N: int = 2000

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError("beta must be in (0, 1]")
        n_inf = self.beta * self.K
        if abs(n_inf - round(n_inf)) > 1e-9 or round(n_inf) < 1:
            raise ValueError(f"beta * K must be a positive integer, got {n_inf}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0 < self.rho < 1:
            raise ValueError("rho must be in (0, 1)")
        if self.N < 1 or self.K < 1:
            raise ValueError("N and K must be positive")

    @property
    def n_informative(self):
        return int(round(self.beta * self.K))


@dataclass
class ClusterDataset:
    X: np.ndarray
    y: np.ndarray
    params: ClusterParams
    centers: np.ndarray  # (2, n_informative); row c is the mean for label c
    direction: np.ndarray
    seed: int = 0

    @property
    def informative(self):
        return np.arange(self.params.n_informative)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j}" for j in range(self.X.shape[1])] + ["label"])
            for row, label in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in row] + [int(label)])
        meta = {
            "params": asdict(self.params),
            "seed": self.seed,
            "direction": self.direction.tolist(),
            "centers": self.centers.tolist(),
        }
        with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1)


def cluster_centers(params, rng):
    d = params.n_informative
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    half = 0.5 * params.gamma * u
    return np.stack([-half, half]), u


def _draw_clusters(params, centers, n, rng):
    y = (rng.random(n) < params.rho).astype(np.int64)
    X = rng.standard_normal((n, params.K))
    X[:, : params.n_informative] += centers[y]
    return X, y


def gen_cluster_dataset(params, seed):
    """N points: label ~ Bernoulli(rho); informative block ~ N(c_label, I), rest ~ N(0, I).

    The centers are +-(gamma/2) u for a uniformly random unit vector u, so
    their distance is gamma and their midpoint is the origin.
    """
    rng = np.random.default_rng([seed, 0])
    centers, u = cluster_centers(params, rng)
    X, y = _draw_clusters(params, centers, params.N, np.random.default_rng([seed, 1]))
    return ClusterDataset(X, y, params, centers, u, seed)


def gen_cluster_splits(params, seed, n_val, n_test):
    """Train set of size N plus validation and test sets drawn around the same centers."""
    train = gen_cluster_dataset(params, seed)
    val_X, val_y = _draw_clusters(params, train.centers, n_val, np.random.default_rng([seed, 2]))
    test_X, test_y = _draw_clusters(params, train.centers, n_test, np.random.default_rng([seed, 3]))
    return train, (val_X, val_y), (test_X, test_y)


@dataclass(frozen=True)
class ClaimsGenParams:
    """Settings for a planted claims cohort.

    ``planted_weights`` maps a window offset (``math.inf`` allowed) to a
    ``{code: weight}`` dict; the label logit is ``intercept`` plus the sum of
    weights of every (window, code) feature that fires.
    """

    n_patients: int = 1000
    vocab_size: int = 50
    mean_visits: float = 10.0
    history_span_days: int = 365
    planted_windows: WindowSet = field(default_factory=lambda: WindowSet((30, math.inf)))
    planted_weights: dict = field(default_factory=dict)
    intercept: float = 0.0
    mean_codes_per_visit: float = 3.0
    zipf_exponent: float = 0.6
    drift_day: int | None = None
    drift_strength: float = 0.5
    n_subgroups: int = 5
    prediction_day: int = 1000

    def __post_init__(self):
        if self.mean_visits < 1:
            raise ValueError("mean_visits must be >= 1")
        if self.n_patients < 1 or self.vocab_size < 1:
            raise ValueError("n_patients and vocab_size must be positive")
        if self.history_span_days < 0 or self.history_span_days > self.prediction_day:
            raise ValueError("history_span_days must be in [0, prediction_day]")
        if self.mean_codes_per_visit < 1:
            raise ValueError("mean_codes_per_visit must be >= 1")
        codes = set(self.code_names)
        for offset, weights in self.planted_weights.items():
            if offset not in self.planted_windows.offsets:
                raise ValueError(f"planted weight window {offset} not in planted_windows")
            unknown = set(weights) - codes
            if unknown:
                raise ValueError(f"planted weights reference unknown codes {sorted(unknown)}")

    @property
    def code_names(self):
        width = max(3, len(str(self.vocab_size - 1)))
        return [f"c{i:0{width}d}" for i in range(self.vocab_size)]

    def weight_vector(self):
        """Planted weights laid out like ``featurize`` output for ``planted_windows``."""
        names = self.code_names
        index = {c: i for i, c in enumerate(names)}
        w = np.zeros(len(self.planted_windows) * len(names))
        for offset, weights in self.planted_weights.items():
            block = self.planted_windows.offsets.index(offset)
            for code, val in weights.items():
                w[block * len(names) + index[code]] = val
        return w

    def to_json(self):
        d = asdict(self)
        d["planted_windows"] = self.planted_windows.to_json()
        d["planted_weights"] = {
            ("inf" if k == math.inf else str(k)): v for k, v in self.planted_weights.items()
        }
        return d

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        obj["planted_windows"] = WindowSet(obj["planted_windows"])
        obj["planted_weights"] = {
            (math.inf if k in ("inf", None) else int(k)): v
            for k, v in obj.get("planted_weights", {}).items()
        }
        return cls(**obj)


def code_distribution(params, after_drift=False):
    ranks = np.arange(1, params.vocab_size + 1, dtype=np.float64)
    p = ranks ** -params.zipf_exponent
    p /= p.sum()
    if after_drift:
        # mix towards the reversed popularity order
        p = (1 - params.drift_strength) * p + params.drift_strength * p[::-1]
    return p


def _patient_rng(seed, i, stream):
    return np.random.default_rng([seed, i, stream])


def _gen_visits(params, i, seed, base_p, drift_p, names):
    rng = _patient_rng(seed, i, 0)
    t_a = params.prediction_day
    n_days = params.history_span_days + 1
    n_visits = min(1 + rng.poisson(params.mean_visits - 1), n_days)
    offsets = np.sort(rng.choice(n_days, size=n_visits, replace=False))[::-1]
    visits = []
    for off in offsets:
        day = int(t_a - off)
        p = drift_p if params.drift_day is not None and day > params.drift_day else base_p
        n_codes = min(1 + rng.poisson(params.mean_codes_per_visit - 1), params.vocab_size)
        idx = rng.choice(params.vocab_size, size=n_codes, replace=False, p=p)
        visits.append(Visit(day, [names[j] for j in idx]))
    return visits


def _subgroups(visits, params, names):
    # tag sg<k> when codes of group k occur in >= 3 visits within two years of T_A
    if params.n_subgroups <= 0:
        return []
    counts = np.zeros(params.n_subgroups, dtype=int)
    index = {c: i for i, c in enumerate(names)}
    for v in visits:
        if params.prediction_day - v.day <= 730:
            groups = {index[c] % params.n_subgroups for c in v.codes}
            for g in groups:
                counts[g] += 1
    return [f"sg{k}" for k in range(params.n_subgroups) if counts[k] >= 3]


def planted_logits(cohort, params):
    return featurize_cohort(cohort, params.planted_windows) @ params.weight_vector() + params.intercept


def label_uniform(seed, i):
    return _patient_rng(seed, i, 1).random()


def gen_claims_cohort(params, seed):
    """Cohort whose labels follow the planted windowed logistic model."""
    names = params.code_names
    vocab = CodeVocab(names)
    base_p = code_distribution(params)
    drift_p = code_distribution(params, after_drift=True)
    w = params.weight_vector()
    records = []
    for i in range(params.n_patients):
        visits = _gen_visits(params, i, seed, base_p, drift_p, names)
        tmp = PatientRecord(f"p{i}", visits, 0)
        x = featurize(tmp, params.planted_windows, vocab, params.prediction_day)
        prob = float(sigmoid_np(np.array([x @ w + params.intercept]))[0])
        label = int(label_uniform(seed, i) < prob)
        records.append(PatientRecord(f"p{i}", visits, label, _subgroups(visits, params, names)))
    cohort = Cohort(params.prediction_day, records, vocab)
    object.__setattr__(cohort, "meta", {"generator": params.to_json(), "seed": seed})
    return cohort


def default_planted_params(**overrides):
    """The desk-scale planted task used by the demos and the acceptance suite."""
    base = dict(
        n_patients=5000,
        vocab_size=40,
        mean_visits=12.0,
        history_span_days=365,
        planted_windows=WindowSet((30, math.inf)),
        planted_weights={
            30: {"c005": 2.0, "c011": 1.5, "c017": 1.5},
            math.inf: {"c002": 1.0, "c008": -1.0, "c023": 1.2},
        },
        intercept=-2.5,
    )
    base.update(overrides)
    return ClaimsGenParams(**base)
