"""Build SARD weights that replicate a windowed linear model, and measure how well they do.

Layout of the constructed network (one attention layer, conv head):

* every code owns a sine-half coordinate with frequency 0, so the visit
  input there is the 0/1 code indicator;
* ``n_freq`` coordinates carry sin/cos(2 pi n t / P);
* every cosine coordinate with frequency 0 is the constant 1;
* there is one head per non-zero teacher feature (window W, code c).  Its query
  is a constant, its key is s * (I_W(t) + [c in visit]) where I_W is a
  truncated Fourier series of the window indicator, and its value is
  I_W(t) + [c in visit] - 1.  A sharp softmax then returns ~1 when c occurs
  inside W and something <= ~0 otherwise;
* kernel k reads its head's output slot and thresholds it at 1/2 with a large
  gain, so sigma(chi_k) is ~ the binary feature; the final layer copies the
  teacher weights and intercept.

Indicator boundaries are moved to half-days (T + 1/2) and the series is
shifted so that its other discontinuity sits outside [0, clip_days]; integer
day ages therefore never land on a jump.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .evaluation import logit, spearman
from .model import CLIP_DAYS, SardConfig, SardModel, pack_cohort, param_shapes, predict_proba
from .windowed_linear import LinearModel, featurize_cohort, predict_linear

DEFAULT_SHIFT = 16.0
DEFAULT_PERIOD = CLIP_DAYS + 35.0


@dataclass(frozen=True)
class FourierWindow:
    T: float
    P: float
    n_max: int
    a0: float
    a: np.ndarray  # cos(2 n pi t / P) coefficients, n = 1..n_max
    b: np.ndarray  # sin(2 n pi t / P) coefficients


def fourier_window_coeffs(T, P, n_max):
    """Series coefficients of the P-periodic indicator of [0, T].

    a0 = T/P, a_n = sin(2 n pi T/P) / (n pi), b_n = 2 sin^2(n pi T/P) / (n pi).
    """
    if not (0 < T <= P) or not math.isfinite(P):
        raise ValueError(f"need 0 < T <= P < inf, got T={T}, P={P}")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = np.arange(1, n_max + 1, dtype=np.float64)
    a = np.sin(2 * n * math.pi * T / P) / (n * math.pi)
    b = 2.0 * np.sin(n * math.pi * T / P) ** 2 / (n * math.pi)
    return FourierWindow(float(T), float(P), int(n_max), T / P, a, b)


def quadrature_coeffs(T, P, n):
    """The same coefficients by numerical projection, for validation."""
    w = 2 * math.pi * n / P
    a = 2.0 / P * quad(lambda t: math.cos(w * t), 0.0, T, limit=200)[0]
    b = 2.0 / P * quad(lambda t: math.sin(w * t), 0.0, T, limit=200)[0]
    return a, b


def indicator_approx(t, fw):
    t = np.asarray(t, dtype=np.float64)
    n = np.arange(1, fw.n_max + 1)
    arg = np.multiply.outer(t, 2 * math.pi * n / fw.P)
    return fw.a0 + np.cos(arg) @ fw.a + np.sin(arg) @ fw.b


def shifted_window(T, n_freq, period=DEFAULT_PERIOD, shift=DEFAULT_SHIFT):
    """Coefficients on sin/cos(w_n t) of a series equal to ~1 on [0, T + 1/2] and ~0 on (T + 1/2, P - shift)."""
    fw = fourier_window_coeffs(T + 0.5 + shift, period, n_freq)
    w = 2 * math.pi * np.arange(1, n_freq + 1) / period
    # f(t + D) expanded with the angle-sum identities
    cos_c = fw.a * np.cos(w * shift) + fw.b * np.sin(w * shift)
    sin_c = fw.b * np.cos(w * shift) - fw.a * np.sin(w * shift)
    return fw.a0, cos_c, sin_c, w


def _layout(n_codes, n_freq, H):
    """Smallest feasible d_e and the slot assignment."""
    step = 2 * H // math.gcd(2, H)
    d_e = step * math.ceil(2 * (n_codes + n_freq + 2) / step)
    while True:
        m, B = d_e // 2, d_e // H
        reserved = {h * B for h in range(H)}
        free_sin = [i for i in range(m) if i not in reserved]
        freq = [i for i in free_sin if i + m not in reserved][:n_freq]
        rest = [i for i in free_sin if i not in freq]
        codes = rest[:n_codes]
        const = [i + m for i in range(m) if i not in freq and i + m not in reserved]
        if len(freq) == n_freq and len(codes) == n_codes and const:
            return d_e, dict(freq=freq, codes=codes, const=const[0], outputs=[h * B for h in range(H)])
        d_e += step


def construct_replicating_sard(teacher, vocab, n_freq, n_v, sharpness=20.0, gain=100.0,
                               period=DEFAULT_PERIOD, shift=DEFAULT_SHIFT, clip_days=CLIP_DAYS):
    """SARD weights whose output approximates ``teacher`` (exact in the infinite-window case)."""
    ws = teacher.window_set
    if ws is None:
        raise ValueError("teacher has no window set")
    for o in ws.offsets:
        if o != math.inf and o >= clip_days:
            raise ValueError(f"window {o} is not representable after clipping at {clip_days} days")
    if period - shift <= clip_days + 0.5:
        raise ValueError("period - shift must exceed the clipping horizon")
    n_codes = len(vocab)
    if teacher.weights.size != len(ws) * n_codes:
        raise ValueError("teacher dimension does not match windows x vocab")
    feats = teacher.nonzero
    if feats.size == 0:
        raise ValueError("teacher has no non-zero weights")
    H = int(feats.size)
    d_e, lay = _layout(n_codes, n_freq, H)
    m, B = d_e // 2, d_e // H
    omega = np.zeros(m)
    _, _, _, w = shifted_window(1.0, n_freq, period, shift)
    omega[lay["freq"]] = w
    config = SardConfig(d_e=d_e, n_v=n_v, L=1, H=H, K=H, dropout_p=0.0, encoder_variant="self_attention",
                        head_variant="conv", omega=omega, clip_days=clip_days)
    P = {k: np.zeros(s) for k, s in param_shapes(config, n_codes).items()}
    P["phi"][np.arange(n_codes), lay["codes"]] = 1.0
    s = math.sqrt(sharpness * math.sqrt(d_e))
    const = lay["const"]
    for h, f in enumerate(feats):
        win, code = divmod(int(f), n_codes)
        T = ws.offsets[win]
        u = np.zeros(d_e)  # u . x = I_W(t) + [code in visit]
        u[lay["codes"][code]] = 1.0
        if T == math.inf:
            u[const] += 1.0
        else:
            a0, cos_c, sin_c, _ = shifted_window(T, n_freq, period, shift)
            u[const] += a0
            u[np.array(lay["freq"]) + m] += cos_c
            u[lay["freq"]] += sin_c
        P["attn0.bq"][h, 0, 0] = s
        P["attn0.Wk"][h, :, 0] = s * u
        out = lay["outputs"][h] - h * B  # position within the head block
        P["attn0.Wv"][h, :, out] = u
        P["attn0.Wv"][h, const, out] -= 1.0
        o = lay["outputs"][h]
        base = 1.0 if o >= m else 0.0
        P["head.kernels"][h, o] = gain
        P["head.kernels"][h, const] = -gain * (base + 0.5)
    P["head.w"][:] = teacher.weights[feats]
    P["head.b"][0] = teacher.intercept
    return SardModel(config, P).check()


def _probs(model, cohort):
    if isinstance(model, LinearModel):
        return predict_linear(model, featurize_cohort(cohort, model.window_set))
    return predict_proba(model, pack_cohort(cohort, model.config))


def replication_error(sard, teacher, cohort, tie_tol=1e-6):
    """(max |dp|, mean |dp|, Spearman of logits) over every patient in ``cohort``.

    The teacher's logits take few distinct values; logits within ``tie_tol``
    count as tied so that round-off does not decide the order of equal scores.
    """
    p_s = _probs(sard, cohort)
    p_t = _probs(teacher, cohort)
    d = np.abs(p_s - p_t)
    rho = spearman(logit(p_s, 1e-300), logit(p_t, 1e-300), tie_tol) if len(cohort) >= 3 else float("nan")
    return float(d.max()), float(d.mean()), rho


SWEEP_FIELDS = ("n_freq", "sharpness", "max_err", "mean_err", "spearman")


def lemma_sweep(teacher, cohort, n_freqs=(16, 32, 64), sharpness=(20.0,), n_v=None, **kw):
    """Replication error for every (n_freq, sharpness) pair; rows are dicts."""
    n_v = n_v or max(len(r.visits) for r in cohort.records)
    rows = []
    for s in sharpness:
        for n in n_freqs:
            model = construct_replicating_sard(teacher, cohort.vocab, n, n_v, sharpness=s, **kw)
            mx, mean, rho = replication_error(model, teacher, cohort)
            rows.append(dict(n_freq=n, sharpness=s, max_err=mx, mean_err=mean, spearman=rho))
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        w.writerows(rows)
