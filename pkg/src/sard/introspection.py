"""Visit importance, attention maps and network dissection."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autograd import sigmoid_np
from .evaluation import mcc_matrix
from .model import forward, pack_patients
from .windowed_linear import feature_names, featurize_cohort


@dataclass
class VisitImportance:
    scores: np.ndarray  # (n_v,) s(V_j), slot 0 = most recent visit
    argmax: np.ndarray  # (K,) slot chosen by each kernel's max-pool
    chi: np.ndarray  # (K,)
    weights: np.ndarray  # (K,)
    mask: np.ndarray  # (n_v,)
    days_before: np.ndarray  # (n_v,)

    @property
    def total(self):
        return float(self.scores.sum())


def _batch_importance(model, batch):
    if model.config.head_variant != "conv":
        raise ValueError("visit importance needs the convolutional head")
    tr = forward(model, batch)
    w = model.params["head.w"]
    contrib = w * sigmoid_np(tr.chi)  # (N, K)
    scores = np.zeros(batch.mask.shape)
    rows = np.repeat(np.arange(len(batch)), tr.chi.shape[1])
    np.add.at(scores, (rows, tr.argmax.ravel()), contrib.ravel())
    return tr, scores


def visit_importance(model, patient, cohort):
    """s(V_j) = sum_k [V_j = nu_k] w_k sigma(chi_k); ties in the max-pool go to the lowest slot."""
    batch = pack_patients([patient], cohort.prediction_day, cohort.vocab, model.config)
    tr, scores = _batch_importance(model, batch)
    return VisitImportance(scores[0], tr.argmax[0], tr.chi[0], model.params["head.w"].copy(),
                           batch.mask[0], batch.days_before[0])


def visit_importance_batch(model, batch):
    """Importance scores (N, n_v) and the pre-sigmoid logits minus bias, for a packed batch."""
    tr, scores = _batch_importance(model, batch)
    return scores, tr.logit.data - model.params["head.b"][0]


def attention_maps(model, patient, cohort):
    """Post-softmax attention weights, shape (L, H, n_v, n_v)."""
    if model.config.encoder_variant != "self_attention":
        raise ValueError("attention maps need the self-attention encoder")
    batch = pack_patients([patient], cohort.prediction_day, cohort.vocab, model.config)
    return np.stack([a[0] for a in forward(model, batch).attention])


def write_matrix_csv(matrix, path):
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt="%.10g")


def penultimate(model, batch):
    """The K post-sigmoid max-pooled kernel activations feeding the final layer."""
    if model.config.head_variant != "conv":
        raise ValueError("dissection needs the convolutional head")
    return forward(model, batch).penultimate


@dataclass
class DissectionReport:
    features: np.ndarray  # teacher feature index matched by each neuron, -1 if none
    mcc: np.ndarray  # (K,) best MCC per neuron
    mcc_matrix: np.ndarray  # (K, n_nonzero)
    nonzero: np.ndarray  # teacher non-zero feature indices (columns of mcc_matrix)
    names: list = field(default_factory=list)  # names of the non-zero features
    threshold: str = "0.5"

    @property
    def unique_features(self):
        return sorted(set(int(f) for f in self.features if f >= 0))

    @property
    def n_unique(self):
        return len(self.unique_features)

    @property
    def percent(self):
        return 100.0 * self.n_unique / self.nonzero.size

    def top_k(self, k=5):
        """Per neuron: the k best features as (feature_index, name, mcc)."""
        out = []
        for row in self.mcc_matrix:
            order = np.argsort(-row, kind="mergesort")[:k]
            out.append([(int(self.nonzero[j]), self.names[j], float(row[j])) for j in order])
        return out

    def to_csv(self, path, window_set, vocab):
        names = feature_names(window_set, vocab)
        n_codes = len(vocab)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["neuron", "feature_index", "feature_name", "window_offset", "mcc"])
            for k, (f, m) in enumerate(zip(self.features, self.mcc)):
                if f < 0:
                    w.writerow([k, -1, "", "", f"{m:.6f}"])
                else:
                    w.writerow([k, int(f), names[f], window_set.label(int(f) // n_codes), f"{m:.6f}"])

    def top_k_csv(self, path, k=5):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["neuron", "rank", "feature_index", "feature_name", "mcc"])
            for neuron, rows in enumerate(self.top_k(k)):
                for rank, (f, name, m) in enumerate(rows, 1):
                    w.writerow([neuron, rank, f, name, f"{m:.6f}"])


def binarize(activations, threshold="0.5"):
    """Sign of the pre-sigmoid value (post-sigmoid > 0.5) or above each neuron's median."""
    if threshold == "0.5":
        return activations > 0.5
    if threshold == "median":
        return activations > np.median(activations, axis=0, keepdims=True)
    raise ValueError("threshold must be '0.5' or 'median'")


def dissect(model, teacher, cohort, threshold="0.5", batch=None):
    """Match every penultimate neuron to the non-zero teacher feature of highest MCC.

    A neuron whose best MCC is not positive (for example one that never
    switches) is left unmatched.
    """
    nz = teacher.nonzero
    if nz.size == 0:
        raise ValueError("teacher has no non-zero weights")
    if batch is None:
        batch = pack_patients(cohort.records, cohort.prediction_day, cohort.vocab, model.config)
    acts = binarize(penultimate(model, batch), threshold)
    feats = featurize_cohort(cohort, teacher.window_set)[:, nz]
    M = mcc_matrix(acts, feats)
    best = np.argmax(M, axis=1)  # first (lowest index) on ties
    best_mcc = M[np.arange(M.shape[0]), best]
    matched = np.where(best_mcc > 0, nz[best], -1)
    names = feature_names(teacher.window_set, cohort.vocab)
    return DissectionReport(matched, best_mcc, M, nz, [names[i] for i in nz], threshold)
