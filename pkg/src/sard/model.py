"""The SARD network and its ablations.

Visits are embedded as the sum of their code embeddings plus a sinusoidal
embedding of the (clipped) days before the prediction date.  An encoder
(masked multi-head self-attention, a GRU, or the identity) contextualizes the
visits and a head (max-pooled convolution or a plain sum) turns them into a
probability.

Visits are packed most-recent-first into ``n_v`` slots; slots past a
patient's history are padding, carry zero vectors and are masked everywhere.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .losses import tensor_loss

ENCODERS = ("self_attention", "gru", "identity")
HEADS = ("conv", "summing")
CLIP_DAYS = 365


def default_omega(d_e):
    return np.geomspace(1e-5, 1.0, d_e // 2)


@dataclass
class SardConfig:
    d_e: int = 32
    n_v: int = 32
    L: int = 2
    H: int = 2
    K: int = 10
    dropout_p: float = 0.05
    encoder_variant: str = "self_attention"
    head_variant: str = "conv"
    omega: np.ndarray | None = None
    clip_days: int = CLIP_DAYS

    def __post_init__(self):
        if self.d_e <= 0 or self.d_e % 2:
            raise ValueError("d_e must be a positive even integer")
        if self.encoder_variant not in ENCODERS:
            raise ValueError(f"encoder_variant must be one of {ENCODERS}")
        if self.head_variant not in HEADS:
            raise ValueError(f"head_variant must be one of {HEADS}")
        if self.encoder_variant == "self_attention" and self.d_e % self.H:
            raise ValueError("d_e must be divisible by H")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        self.omega = default_omega(self.d_e) if self.omega is None else np.asarray(self.omega, dtype=np.float64)
        if self.omega.shape != (self.d_e // 2,):
            raise ValueError(f"omega must have length d_e/2 = {self.d_e // 2}")
        # zero frequencies are allowed: they give constant (cos) and zero (sin) channels
        if np.any(self.omega < 0) or not np.all(np.isfinite(self.omega)):
            raise ValueError("omega must be finite and non-negative")

    @property
    def head_dim(self):
        return self.d_e // self.H

    def to_json(self):
        d = asdict(self)
        d["omega"] = self.omega.tolist()
        return d

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


def param_shapes(config, n_codes):
    d, B = config.d_e, config.d_e // max(config.H, 1)
    shapes = {"phi": (n_codes, d)}
    if config.encoder_variant == "self_attention":
        for layer in range(config.L):
            for name in ("q", "k", "v"):
                shapes[f"attn{layer}.W{name}"] = (config.H, d, B)
                shapes[f"attn{layer}.b{name}"] = (config.H, 1, B)
    elif config.encoder_variant == "gru":
        shapes.update({"gru.Wx": (d, 3 * d), "gru.Wh": (d, 3 * d), "gru.bx": (3 * d,), "gru.bh": (3 * d,)})
    if config.head_variant == "conv":
        shapes.update({"head.kernels": (config.K, d), "head.w": (config.K,), "head.b": (1,)})
    else:
        shapes.update({"head.w": (d,), "head.b": (1,)})
    return shapes


@dataclass
class SardModel:
    config: SardConfig
    params: dict = field(default_factory=dict)

    @property
    def n_codes(self):
        return self.params["phi"].shape[0]

    def copy(self):
        return SardModel(SardConfig.from_json(self.config.to_json()), {k: v.copy() for k, v in self.params.items()})

    def check(self):
        expected = param_shapes(self.config, self.n_codes)
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names {sorted(self.params)} != {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape} != {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ValueError(f"{name}: non-finite values")
        return self


def init_model(config, n_codes, seed, phi=None):
    """Random initialization; ``phi`` optionally supplies the code embeddings."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(config.d_e)
    params = {}
    for name, shape in param_shapes(config, n_codes).items():
        if name.endswith((".bq", ".bk", ".bv", ".bx", ".bh")) or name == "head.b":
            params[name] = np.zeros(shape)
        elif name == "head.w":
            params[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
        else:
            params[name] = rng.normal(0.0, scale, shape)
    if phi is not None:
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (n_codes, config.d_e):
            raise ValueError("phi has the wrong shape")
        params["phi"] = phi.copy()
    return SardModel(config, params)


def cooccurrence_embeddings(cohort, d_e, seed=0):
    """Positive-PMI of within-visit code co-occurrence, reduced by truncated SVD."""
    n = len(cohort.vocab)
    counts = np.zeros((n, n))
    for rec in cohort.records:
        for v in rec.visits:
            idx = cohort.vocab.indices(sorted(v.codes))
            counts[np.ix_(idx, idx)] += 1.0
    np.fill_diagonal(counts, 0.0)
    total = counts.sum()
    if total == 0:
        return np.random.default_rng(seed).normal(0.0, 1.0 / math.sqrt(d_e), (n, d_e))
    row = counts.sum(1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(counts * total / (row * row.T))
    ppmi = np.where(np.isfinite(pmi) & (pmi > 0), pmi, 0.0)
    u, s, _ = np.linalg.svd(ppmi)
    k = min(d_e, n)
    emb = np.zeros((n, d_e))
    emb[:, :k] = u[:, :k] * np.sqrt(s[:k])
    norm = np.linalg.norm(emb, axis=1).mean()
    if norm > 0:
        emb *= 1.0 / norm
    return emb


# ---------------------------------------------------------------------------
# input packing


def temporal_embed(visit_day, prediction_day, omega, clip_days=CLIP_DAYS):
    """sin(t omega) || cos(t omega) with t = min(clip_days, prediction_day - visit_day)."""
    delta = np.asarray(prediction_day, dtype=np.float64) - np.asarray(visit_day, dtype=np.float64)
    if np.any(delta < 0):
        raise ValueError("visit after prediction day")
    t = np.minimum(float(clip_days), delta)
    arg = np.multiply.outer(t, omega)
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def embed_visit(codes, phi, vocab):
    """Sum of the code embeddings of one visit."""
    idx = vocab.indices(sorted(codes))
    return phi[idx].sum(axis=0)


@dataclass
class VisitBatch:
    codes: sp.csr_matrix  # (N * n_v, |C|) code incidence per slot
    tau: np.ndarray  # (N, n_v, d_e), zero on pad slots
    mask: np.ndarray  # (N, n_v) bool, slot 0 is the most recent visit
    days_before: np.ndarray  # (N, n_v) clipped days before prediction, -1 on pads

    def __len__(self):
        return self.mask.shape[0]

    @property
    def n_v(self):
        return self.mask.shape[1]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        rows = (idx[:, None] * self.n_v + np.arange(self.n_v)).ravel()
        return VisitBatch(self.codes[rows], self.tau[idx], self.mask[idx], self.days_before[idx])


def pack_patients(records, prediction_day, vocab, config):
    """Most-recent-first packing of up to ``n_v`` visits per patient."""
    n, n_v = len(records), config.n_v
    mask = np.zeros((n, n_v), dtype=bool)
    days = np.full((n, n_v), -1, dtype=np.int64)
    rows, cols = [], []
    for i, rec in enumerate(records):
        if not rec.visits:
            raise ValueError(f"patient {rec.patient_id} has no visits")
        recent = rec.visits[::-1][:n_v]
        for j, visit in enumerate(recent):
            if visit.day > prediction_day:
                raise ValueError(f"patient {rec.patient_id}: visit after prediction day")
            mask[i, j] = True
            days[i, j] = min(config.clip_days, prediction_day - visit.day)
            for c in vocab.indices(visit.codes):
                rows.append(i * n_v + j)
                cols.append(c)
    codes = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n * n_v, len(vocab)))
    codes.sum_duplicates()
    tau = temporal_embed(np.where(mask, prediction_day - days, prediction_day), prediction_day, config.omega,
                         config.clip_days)
    tau *= mask[..., None]
    return VisitBatch(codes, tau, mask, days)


def pack_cohort(cohort, config):
    return pack_patients(cohort.records, cohort.prediction_day, cohort.vocab, config)


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class ForwardTrace:
    p: ag.Tensor
    logit: ag.Tensor
    inputs: np.ndarray
    encoded: np.ndarray
    attention: list  # per layer: (N, H, n_v, n_v)
    chi: np.ndarray | None = None
    argmax: np.ndarray | None = None
    penultimate: np.ndarray | None = None


def _attention_block(x, P, layer, config, mask, train_mode, rng, attn_out):
    N, n, d = x.shape
    H, B = config.H, config.head_dim
    xh = ag.reshape(x, (N, 1, n, d))
    q = ag.add(ag.matmul(xh, P[f"attn{layer}.Wq"]), P[f"attn{layer}.bq"])
    k = ag.add(ag.matmul(xh, P[f"attn{layer}.Wk"]), P[f"attn{layer}.bk"])
    v = ag.add(ag.matmul(xh, P[f"attn{layer}.Wv"]), P[f"attn{layer}.bv"])
    raw = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
    w = ag.masked_softmax(raw, mask[:, None, None, :], axis=-1)
    w = ag.mul(w, mask[:, None, :, None].astype(np.float64))
    attn_out.append(w.data)
    out = ag.matmul(w, v)  # (N, H, n, B)
    out = ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (N, n, H * B))
    if train_mode:
        out = ag.dropout(out, config.dropout_p, rng)
    return ag.add(x, out)


def _gru(x, P, config, mask):
    N, n, d = x.shape
    xw = ag.add(ag.matmul(x, P["gru.Wx"]), P["gru.bx"])  # (N, n, 3d)
    h = ag.Tensor(np.zeros((N, d)))
    outs = [None] * n
    Wh, bh = P["gru.Wh"], P["gru.bh"]
    # pads sit in the highest slots, so walking from the last slot to slot 0
    # runs oldest -> newest with the state held at zero across padding
    for j in range(n - 1, -1, -1):
        m = mask[:, j:j + 1].astype(np.float64)
        gx = ag.take(xw, (slice(None), j))
        gh = ag.add(ag.matmul(h, Wh), bh)
        r = ag.sigmoid(ag.add(gx[:, :d], gh[:, :d]))
        z = ag.sigmoid(ag.add(gx[:, d:2 * d], gh[:, d:2 * d]))
        cand = ag.tanh(ag.add(gx[:, 2 * d:], ag.mul(r, gh[:, 2 * d:])))
        h_new = ag.add(ag.mul(ag.add(1.0, ag.neg(z)), cand), ag.mul(z, h))
        h = ag.add(ag.mul(h_new, m), ag.mul(h, 1.0 - m))
        outs[j] = ag.reshape(ag.mul(h, m), (N, 1, d))
    return ag.concat(outs, axis=1)


def forward(model, batch, train_mode=False, rng=None, params=None):
    """Run the network on a packed batch; returns a ForwardTrace.

    ``params`` may hold Tensors (for gradients); by default the model's arrays
    are wrapped as constants.
    """
    config = model.config
    if params is None:
        params = {k: ag.Tensor(v) for k, v in model.params.items()}
    if train_mode and rng is None:
        rng = np.random.default_rng(0)
    N, n = batch.mask.shape
    d = config.d_e
    mask = batch.mask
    psi = ag.reshape(ag.spmm(batch.codes, params["phi"]), (N, n, d))
    x = ag.add(psi, batch.tau)
    inputs = x.data
    attention = []
    if config.encoder_variant == "self_attention":
        for layer in range(config.L):
            x = _attention_block(x, params, layer, config, mask, train_mode, rng, attention)
    elif config.encoder_variant == "gru":
        x = _gru(x, params, config, mask)
        if train_mode:
            x = ag.dropout(x, config.dropout_p, rng)
    encoded = x
    fmask = mask.astype(np.float64)
    trace = ForwardTrace(None, None, inputs, encoded.data, attention)
    if config.head_variant == "conv":
        scores = ag.matmul(encoded, ag.transpose(params["head.kernels"], (1, 0)))  # (N, n, K)
        chi, arg = ag.masked_max(scores, mask[:, :, None], axis=1)
        feats = ag.sigmoid(chi)
        logit = ag.add(ag.matmul(feats, ag.reshape(params["head.w"], (-1, 1))), params["head.b"])
        trace.chi, trace.argmax, trace.penultimate = chi.data, arg, feats.data
    else:
        pooled = ag.tsum(ag.mul(encoded, fmask[:, :, None]), axis=1)
        logit = ag.add(ag.matmul(pooled, ag.reshape(params["head.w"], (-1, 1))), params["head.b"])
    logit = ag.reshape(logit, (N,))
    trace.logit = logit
    trace.p = ag.sigmoid(logit)
    return trace


def encode(batch, model, train_mode=False, seed=0):
    """Contextualized visit embeddings, shape (N, n_v, d_e)."""
    return forward(model, batch, train_mode, np.random.default_rng(seed)).encoded


def head_forward(encoded, mask, model):
    """Apply the prediction head to already-contextualized visits."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise ValueError("every patient needs at least one non-pad visit")
    P = model.params
    if model.config.head_variant == "conv":
        scores = encoded @ P["head.kernels"].T
        chi = np.where(mask[:, :, None], scores, -np.inf).max(axis=1)
        z = ag.sigmoid_np(chi) @ P["head.w"] + P["head.b"][0]
    else:
        z = (encoded * mask[:, :, None]).sum(axis=1) @ P["head.w"] + P["head.b"][0]
    return ag.sigmoid_np(z)


def predict_proba(model, batch, chunk=1000):
    out = []
    for start in range(0, len(batch), chunk):
        out.append(forward(model, batch.take(np.arange(start, min(start + chunk, len(batch))))).p.data)
    return np.concatenate(out) if out else np.zeros(0)


def model_forward(model, patient, cohort, train_mode=False, seed=0):
    batch = pack_patients([patient], cohort.prediction_day, cohort.vocab, model.config)
    return float(forward(model, batch, train_mode, np.random.default_rng(seed)).p.data[0])


def model_gradient(model, batch, loss_spec, labels=None, teacher_p=None, train_mode=False, rng=None):
    """Mean batch loss and its exact gradient with respect to every parameter."""
    params = {k: ag.parameter(v) for k, v in model.params.items()}
    trace = forward(model, batch, train_mode, rng, params=params)
    per = tensor_loss(loss_spec, trace.p, label=labels, teacher_p=teacher_p)
    loss = ag.mean(per)
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite loss")
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
    return float(loss.data), grads


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model, path):
    arrays = {f"param:{k}": v for k, v in model.params.items()}
    arrays["config"] = np.frombuffer(json.dumps(model.config.to_json()).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    with np.load(path) as data:
        config = SardConfig.from_json(json.loads(data["config"].tobytes().decode()))
        params = {k[len("param:"):]: data[k].copy() for k in data.files if k.startswith("param:")}
    return SardModel(config, params).check()
