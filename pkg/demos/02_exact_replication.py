"""
An attention network that reproduces a windowed linear model
=============================================================

The windowed features "code c seen in the last T days" can be computed by
attention: a query that fires only for visits holding c, and a key built
from a Fourier series of the window's indicator over visit age.  Stacking
one such head per non-zero teacher weight and reading out through the conv
head gives a network whose probabilities match the teacher.  The error
shrinks as more frequencies are used.
"""
import math

import numpy as np

from sard.lemma import construct_replicating_sard, lemma_sweep, shifted_window
from sard.synthgen import default_planted_params, gen_claims_cohort
from sard.windowed_linear import LinearModel

params = default_planted_params(
    n_patients=200, vocab_size=20,
    planted_weights={30: {"c005": 2.0, "c011": 1.5, "c017": 1.5}, math.inf: {"c002": 1.0, "c008": -1.0}})
cohort = gen_claims_cohort(params, 0)
teacher = LinearModel(params.weight_vector(), params.intercept, math.inf, params.planted_windows)

###############################################################################
# The 30-day window as a truncated Fourier series over ages 0..365.
ages = np.arange(366.0)
for n in (16, 32, 64):
    a0, cos_c, sin_c, w = shifted_window(30, n)
    approx = a0 + np.cos(np.outer(ages, w)) @ cos_c + np.sin(np.outer(ages, w)) @ sin_c
    inside, outside = approx[ages <= 30], approx[ages > 30]
    print(f"n_freq={n:3d}: inside min {inside.min():.3f}, outside max {outside.max():.3f}")

###############################################################################
# Replication error against the teacher on every patient.
rows = lemma_sweep(teacher, cohort, (16, 32, 64), sharpness=(20.0,))
for r in rows:
    print(f"n_freq={r['n_freq']:3d}  max|dp|={r['max_err']:.2e}  mean|dp|={r['mean_err']:.2e}  "
          f"spearman={r['spearman']:.6f}")

n_v = max(len(r.visits) for r in cohort.records)
model = construct_replicating_sard(teacher, cohort.vocab, 64, n_v)
print(f"constructed network: {model.config.H} heads, d_e={model.config.d_e}, K={model.config.K}")
