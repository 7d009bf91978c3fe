"""Adam, gradient accumulation, reverse-distillation pre-training and fine-tuning.

Also holds the small-MLP procedures used on the Gaussian-cluster data
(reverse distillation, a plain network, L1 feature selection and oracle
feature selection).
"""
from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .corpus import class_weight
from .evaluation import auc_roc
from .losses import EPS, LossSpec, loss_ce, loss_rd, loss_tune, per_example_loss  # noqa: F401
from .model import forward, model_gradient, pack_cohort, predict_proba
from .windowed_linear import featurize_cohort, fit_best_lambda, predict_linear

ALPHA_GRID = (0.0, 0.05, 0.1, 0.15, 0.2)
DESK_LAMBDA_GRID = (3000.0, 1000.0, 300.0, 100.0, 30.0, 10.0, 3.0)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9

    @classmethod
    def zeros_like(cls, params, **hyper):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, **hyper)


def adam_step(state, grads):
    """One bias-corrected Adam update; returns ``(new_state, deltas)``."""
    if set(grads) != set(state.m):
        raise ValueError("gradient names do not match optimizer state")
    t = state.step + 1
    m, v, deltas = {}, {}, {}
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for k, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        if g.shape != state.m[k].shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != {state.m[k].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"{k}: non-finite gradient")
        m[k] = state.beta1 * state.m[k] + (1 - state.beta1) * g
        v[k] = state.beta2 * state.v[k] + (1 - state.beta2) * g * g
        deltas[k] = -state.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + state.eps)
    new = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    return new, deltas


# ---------------------------------------------------------------------------
# configuration and history


@dataclass
class TrainConfig:
    batch_size: int = 500
    micro_batch: int = 100
    max_epochs: int = 50
    patience: int = 5
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    alpha_grid: tuple = ALPHA_GRID
    seed: int = 0

    def __post_init__(self):
        if self.micro_batch < 1 or self.micro_batch > self.batch_size:
            raise ValueError("need 1 <= micro_batch <= batch_size")
        if self.batch_size % self.micro_batch:
            raise ValueError("batch_size must be divisible by micro_batch")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        self.alpha_grid = tuple(float(a) for a in self.alpha_grid)

    def adam(self, params):
        return AdamState.zeros_like(params, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


HISTORY_FIELDS = ("phase", "epoch", "train_loss", "val_loss", "val_auc", "wall_time", "status")


def write_history_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in history:
            w.writerow(row)


def read_history_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# gradient accumulation


def accumulated_gradient(model, batch, spec, labels=None, teacher_p=None, micro_batch=None,
                         train_mode=False, rng=None):
    """Mean loss and gradient over ``batch``, evaluated in micro-batches.

    Micro-batch means are weighted by their share of the batch, which makes
    the result equal to a single full-batch evaluation.
    """
    n = len(batch)
    micro_batch = micro_batch or n
    total_loss = 0.0
    total = None
    for start in range(0, n, micro_batch):
        idx = np.arange(start, min(start + micro_batch, n))
        sub = batch.take(idx)
        lab = None if labels is None else np.asarray(labels)[idx]
        tp = None if teacher_p is None else np.asarray(teacher_p)[idx]
        loss, grads = model_gradient(model, sub, spec, lab, tp, train_mode, rng)
        frac = idx.size / n
        total_loss += frac * loss
        if total is None:
            total = {k: frac * g for k, g in grads.items()}
        else:
            for k, g in grads.items():
                total[k] += frac * g
    return total_loss, total


def teacher_probs(teacher, cohort):
    return predict_linear(teacher, featurize_cohort(cohort, teacher.window_set))


# ---------------------------------------------------------------------------
# training loop


def _evaluate(model, batch, spec, labels, teacher_p):
    p = predict_proba(model, batch)
    loss = float(per_example_loss(spec, p, labels, teacher_p).mean())
    try:
        auc = auc_roc(p, labels) if labels is not None else float("nan")
    except ValueError:
        auc = float("nan")
    return p, loss, auc


def _fit(model, spec, train_batch, train_labels, train_teacher, val_batch, val_labels, val_teacher,
         config, select, phase):
    """Adam over shuffled batches; keeps the checkpoint with the best validation metric."""
    if select not in ("loss", "auc"):
        raise ValueError("select must be 'loss' or 'auc'")
    model = model.copy()
    state = config.adam(model.params)
    start = time.perf_counter()

    def score(loss, auc):
        return -loss if select == "loss" else auc

    _, tr_loss, _ = _evaluate(model, train_batch, spec, train_labels, train_teacher)
    _, va_loss, va_auc = _evaluate(model, val_batch, spec, val_labels, val_teacher)
    history = [dict(phase=phase, epoch=0, train_loss=tr_loss, val_loss=va_loss, val_auc=va_auc,
                    wall_time=time.perf_counter() - start, status="init")]
    best = (score(va_loss, va_auc), 0, model.copy())
    n = len(train_batch)
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = np.random.default_rng([config.seed, epoch]).permutation(n)
        diverged = False
        for step, s in enumerate(range(0, n, config.batch_size)):
            idx = perm[s:s + config.batch_size]
            rng = np.random.default_rng([config.seed, epoch, step])
            try:
                _, grads = accumulated_gradient(
                    model, train_batch.take(idx), spec,
                    None if train_labels is None else train_labels[idx],
                    None if train_teacher is None else train_teacher[idx],
                    config.micro_batch, train_mode=True, rng=rng)
                state, deltas = adam_step(state, grads)
            except FloatingPointError:
                diverged = True
                break
            for k, d in deltas.items():
                model.params[k] += d
        if diverged or not all(np.all(np.isfinite(p)) for p in model.params.values()):
            history.append(dict(phase=phase, epoch=epoch, train_loss=float("nan"), val_loss=float("nan"),
                                val_auc=float("nan"), wall_time=time.perf_counter() - start, status="diverged"))
            warnings.warn(f"{phase}: divergence at epoch {epoch}; returning last good checkpoint", RuntimeWarning)
            break
        _, tr_loss, _ = _evaluate(model, train_batch, spec, train_labels, train_teacher)
        _, va_loss, va_auc = _evaluate(model, val_batch, spec, val_labels, val_teacher)
        history.append(dict(phase=phase, epoch=epoch, train_loss=tr_loss, val_loss=va_loss, val_auc=va_auc,
                            wall_time=time.perf_counter() - start, status="ok"))
        sc = score(va_loss, va_auc)
        if sc > best[0]:
            best = (sc, epoch, model.copy())
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    for row in history:
        row["best"] = row["epoch"] == best[1]
    return best[2], history


def pretrain_rd(model, teacher, train, val, config, p_c=None):
    """Fit the network to the teacher's probabilities with the weighted RD loss.

    Early stopping watches the validation RD loss.
    """
    p_c = class_weight(train.labels) if p_c is None else p_c
    spec = LossSpec("rd", p_c=p_c)
    tb, vb = pack_cohort(train, model.config), pack_cohort(val, model.config)
    return _fit(model, spec, tb, train.labels, teacher_probs(teacher, train), vb, val.labels,
                teacher_probs(teacher, val), config, "loss", "pretrain")


def finetune(model, teacher, train, val, config, alpha=0.0, p_c=None):
    """Minimize CE + alpha * RD against the labels; early stopping on validation AUC."""
    p_c = class_weight(train.labels) if p_c is None else p_c
    if alpha > 0 and teacher is None:
        raise ValueError("alpha > 0 needs a teacher")
    spec = LossSpec("tune", p_c=p_c, alpha=alpha)
    tb, vb = pack_cohort(train, model.config), pack_cohort(val, model.config)
    tt = teacher_probs(teacher, train) if teacher is not None else np.full(len(train), 0.5)
    vt = teacher_probs(teacher, val) if teacher is not None else np.full(len(val), 0.5)
    return _fit(model, spec, tb, train.labels, tt, vb, val.labels, vt, config, "auc", "finetune")


def finetune_alpha_grid(model, teacher, train, val, config, p_c=None):
    """Fine-tune once per alpha in the config grid; keep the best validation AUC."""
    best = None
    for alpha in config.alpha_grid:
        m, hist = finetune(model, teacher, train, val, config, alpha, p_c)
        auc = max(r["val_auc"] for r in hist if r["status"] != "diverged")
        if best is None or auc > best[2]:
            best = (m, hist, auc, alpha)
    return best[0], best[1], best[3]


# ---------------------------------------------------------------------------
# small MLP for the Gaussian-cluster experiments


@dataclass
class MLPConfig:
    width: int = 64
    lr: float = 1e-3
    batch_size: int = 200
    max_epochs: int = 200
    patience: int = 10
    alpha_grid: tuple = (0.0, 0.1, 0.3, 1.0, 3.0)
    lambda_grid: tuple = DESK_LAMBDA_GRID
    n_val: int = 2000
    n_test: int = 10000


def init_mlp(n_in, width, seed):
    rng = np.random.default_rng(seed)
    return {
        "W1": rng.normal(0.0, math.sqrt(2.0 / n_in), (n_in, width)),
        "b1": np.zeros(width),
        "W2": rng.normal(0.0, math.sqrt(2.0 / width), (width, width)),
        "b2": np.zeros(width),
        "w": rng.normal(0.0, 1.0 / math.sqrt(width), (width,)),
        "b": np.zeros(1),
    }


def mlp_forward(P, X):
    """Two ReLU layers, then a weighted sum of the hidden units and a sigmoid."""
    h = ag.relu(ag.add(ag.matmul(X, P["W1"]), P["b1"]))
    h = ag.relu(ag.add(ag.matmul(h, P["W2"]), P["b2"]))
    z = ag.add(ag.matmul(h, ag.reshape(P["w"], (-1, 1))), P["b"])
    return ag.sigmoid(ag.reshape(z, (-1,)))


def mlp_predict(params, X):
    return mlp_forward({k: ag.Tensor(v) for k, v in params.items()}, ag.Tensor(X)).data


def _binary_entropy(g):
    g = np.clip(g, EPS, 1 - EPS)
    return -(g * np.log(g) + (1 - g) * np.log(1 - g))


def mlp_loss_np(p, y=None, g=None, alpha=0.0, kind="ce"):
    """Mean CE, KL(g || p) or CE + alpha * KL."""
    if kind == "kl":
        return float((loss_rd(g, p) - _binary_entropy(g)).mean())
    ce = loss_ce(y, p).mean()
    if kind == "ce" or alpha == 0:
        return float(ce)
    return float(ce + alpha * (loss_rd(g, p) - _binary_entropy(g)).mean())


def _mlp_tensor_loss(p, y, g, alpha, kind):
    if kind == "kl":
        return ag.mean(ag.add(_xent_t(g, p), -_binary_entropy(g)))
    ce = ag.mean(_xent_t(y, p))
    if kind == "ce" or alpha == 0:
        return ce
    return ag.add(ce, ag.mul(ag.mean(ag.add(_xent_t(g, p), -_binary_entropy(g))), alpha))


def _xent_t(target, p):
    pc = ag.clip(p, EPS, 1 - EPS)
    return ag.add(ag.mul(ag.log(pc), -target), ag.mul(ag.log(1.0 - pc), -(1 - target)))


def train_mlp(X, y, Xv, yv, config, seed, init=None, kind="ce", g=None, gv=None, alpha=0.0):
    """Minibatch Adam on an MLP.  ``kind`` is "ce", "kl" (to teacher ``g``) or "tune".

    KL runs stop on validation KL; the others stop on validation AUC.
    """
    params = {k: v.copy() for k, v in (init or init_mlp(X.shape[1], config.width, seed)).items()}
    state = AdamState.zeros_like(params, lr=config.lr, beta1=0.9, beta2=0.98, eps=1e-9)
    y = np.asarray(y, dtype=np.float64)
    yv = np.asarray(yv, dtype=np.float64)

    def val_score(P):
        pv = mlp_predict(P, Xv)
        if kind == "kl":
            return -mlp_loss_np(pv, g=gv, kind="kl")
        return auc_roc(pv, yv)

    best = (val_score(params), {k: v.copy() for k, v in params.items()})
    stale = 0
    n = X.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        perm = np.random.default_rng([seed, epoch]).permutation(n)
        for s in range(0, n, config.batch_size):
            idx = perm[s:s + config.batch_size]
            P = {k: ag.parameter(v) for k, v in params.items()}
            p = mlp_forward(P, ag.Tensor(X[idx]))
            loss = _mlp_tensor_loss(p, y[idx], None if g is None else g[idx], alpha, kind)
            loss.backward()
            state, deltas = adam_step(state, {k: t.grad for k, t in P.items()})
            for k, d in deltas.items():
                params[k] = params[k] + d
        sc = val_score(params)
        if sc > best[0]:
            best = (sc, {k: v.copy() for k, v in params.items()})
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best[1]


PROCEDURES = ("ReverseDistill", "StandardNN", "FeatureSelectL1", "Oracle")


def run_appendixF_procedures(splits, config=None, seed=0):
    """Train the four procedures on ``(train, (Xv, yv), (Xt, yt))``; return test AUCs and details."""
    config = config or MLPConfig()
    train, (Xv, yv), (Xt, yt) = splits
    X, y = train.X, train.y
    if y.min() == y.max() or yv.min() == yv.max() or yt.min() == yt.max():
        raise ValueError("degenerate dataset: a split has a single class")
    teacher, teacher_val_auc = fit_best_lambda(X, y, Xv, yv, config.lambda_grid)
    g, gv = predict_linear(teacher, X), predict_linear(teacher, Xv)
    init_seed = [seed, 7]
    out = {"teacher": auc_roc(teacher.decision_function(Xt), yt)}
    details = {"teacher_lambda": teacher.lam, "teacher_val_auc": teacher_val_auc}

    # reverse distillation: KL pretrain, then alpha-tuned fine-tune
    pre = train_mlp(X, y, Xv, yv, config, init_seed, kind="kl", g=g, gv=gv)
    best = None
    for alpha in config.alpha_grid:
        P = train_mlp(X, y, Xv, yv, config, init_seed, init=pre, kind="tune", g=g, gv=gv, alpha=alpha)
        val = auc_roc(mlp_predict(P, Xv), yv)
        if best is None or val > best[0]:
            best = (val, alpha, P)
    out["ReverseDistill"] = auc_roc(mlp_predict(best[2], Xt), yt)
    details["alpha"] = best[1]

    P = train_mlp(X, y, Xv, yv, config, init_seed, kind="ce")
    out["StandardNN"] = auc_roc(mlp_predict(P, Xt), yt)

    sel = teacher.nonzero
    details["n_selected"] = int(sel.size)
    if sel.size == 0:
        # nothing survived the penalty: the selected network sees no inputs
        out["FeatureSelectL1"] = 0.5
    else:
        P = train_mlp(X[:, sel], y, Xv[:, sel], yv, config, init_seed, kind="ce")
        out["FeatureSelectL1"] = auc_roc(mlp_predict(P, Xt[:, sel]), yt)

    inf = train.informative
    P = train_mlp(X[:, inf], y, Xv[:, inf], yv, config, init_seed, kind="ce")
    out["Oracle"] = auc_roc(mlp_predict(P, Xt[:, inf]), yt)
    return out, details
