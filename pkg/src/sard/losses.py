"""The reverse-distillation, cross-entropy and fine-tuning losses.

Each loss exists twice: a numpy version for evaluation and a Tensor version
for gradients.  Probabilities are clamped to [1e-7, 1 - 1e-7] inside logs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag

EPS = 1e-7


@dataclass(frozen=True)
class LossSpec:
    kind: str  # "rd", "ce" or "tune"
    p_c: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rd", "ce", "tune"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not self.p_c > 0:
            raise ValueError("p_c must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


def _weighted_xent(target, f, p_c):
    f = np.clip(np.asarray(f, dtype=np.float64), EPS, 1 - EPS)
    target = np.asarray(target, dtype=np.float64)
    out = -p_c * target * np.log(f) - (1 - target) * np.log(1 - f)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite loss")
    return out


def loss_rd(teacher_p, student_p, p_c=1.0):
    return _weighted_xent(teacher_p, student_p, p_c)


def loss_ce(label, student_p, p_c=1.0):
    return _weighted_xent(label, student_p, p_c)


def loss_tune(label, teacher_p, student_p, p_c=1.0, alpha=0.0):
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return loss_ce(label, student_p, p_c) + alpha * loss_rd(teacher_p, student_p, p_c)


def per_example_loss(spec, student_p, label=None, teacher_p=None):
    """Numpy per-example loss for a LossSpec."""
    if spec.kind == "rd":
        return loss_rd(teacher_p, student_p, spec.p_c)
    if spec.kind == "ce":
        return loss_ce(label, student_p, spec.p_c)
    return loss_tune(label, teacher_p, student_p, spec.p_c, spec.alpha)


def _t_weighted_xent(target, f, p_c):
    fc = ag.clip(f, EPS, 1 - EPS)
    target = np.asarray(target, dtype=np.float64)
    return ag.add(ag.mul(ag.log(fc), -p_c * target), ag.mul(ag.log(1.0 - fc), -(1 - target)))


def tensor_loss(spec, student_p, label=None, teacher_p=None):
    """Per-example Tensor loss matching ``per_example_loss``."""
    if spec.kind == "rd":
        return _t_weighted_xent(teacher_p, student_p, spec.p_c)
    ce = _t_weighted_xent(label, student_p, spec.p_c)
    if spec.kind == "ce":
        return ce
    return ag.add(ce, ag.mul(_t_weighted_xent(teacher_p, student_p, spec.p_c), spec.alpha))
