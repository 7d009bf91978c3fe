"""
Reverse distillation on a planted claims cohort
===============================================

Generate a cohort whose outcome depends on a handful of windowed codes, fit
the sparse linear teacher, pre-train the attention network to imitate it and
then fine-tune on labels.  A second network is fine-tuned from the same
initialisation without the imitation step, for comparison.

Run with ``python demos/01_reverse_distillation.py [n_patients] [seed]``.
"""
import math
import sys

import numpy as np

from sard.corpus import split_cohort
from sard.evaluation import delong_test, logit, score_report, spearman
from sard.model import SardConfig, init_model, pack_cohort, predict_proba
from sard.synthgen import default_planted_params, gen_claims_cohort
from sard.training import DESK_LAMBDA_GRID, TrainConfig, finetune, pretrain_rd, teacher_probs
from sard.windowed_linear import WindowSet, feature_names, featurize_cohort, fit_best_lambda

n_patients = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

###############################################################################
# The cohort.  Each record is a list of dated visits, each visit a set of codes.
params = default_planted_params(n_patients=n_patients)
cohort = gen_claims_cohort(params, seed)
train, val, test = split_cohort(cohort, (0.5, 0.25, 0.25), seed)
print(f"{len(cohort)} patients, {len(cohort.vocab)} codes, positive rate {cohort.labels.mean():.3f}")

###############################################################################
# The teacher: L1 logistic regression on "code seen in the last 30 days" and
# "code ever seen" indicators.  Its non-zero weights should recover the
# planted ones.
ws = WindowSet((30, math.inf))
teacher, val_auc = fit_best_lambda(featurize_cohort(train, ws), train.labels,
                                   featurize_cohort(val, ws), val.labels, DESK_LAMBDA_GRID)
teacher.window_set = ws
names = feature_names(ws, cohort.vocab)
print(f"teacher: lambda={teacher.lam:g}, validation AUC {val_auc:.3f}")
for i in teacher.nonzero[np.argsort(-np.abs(teacher.weights[teacher.nonzero]))][:8]:
    print(f"  {names[i]:>10s} {teacher.weights[i]:+.3f}")

###############################################################################
# Pre-train on the teacher's probabilities, then fine-tune on labels.
cfg = SardConfig(d_e=32, n_v=16, L=2, H=2, K=10, dropout_p=0.05)
tc = TrainConfig(batch_size=100, micro_batch=100, max_epochs=50, patience=5, lr=5e-3, seed=seed)
init = init_model(cfg, len(cohort.vocab), seed)

pre, hist = pretrain_rd(init, teacher, train, val, tc)
print(f"pre-training stopped after {len(hist)} epochs")
tb = pack_cohort(test, cfg)
g_test = teacher_probs(teacher, test)
rho = spearman(logit(predict_proba(pre, tb)), logit(g_test))
print(f"held-out Spearman(network logit, teacher logit) after pre-training: {rho:.3f}")

rd, _ = finetune(pre, teacher, train, val, tc)
nord, _ = finetune(init, teacher, train, val, tc)

###############################################################################
# Test-set comparison.
y = test.labels
scores = {"teacher": g_test, "rd": predict_proba(rd, tb), "no_rd": predict_proba(nord, tb)}
for name, s in scores.items():
    r = score_report(s, y, name)
    print(f"{name:>8s}  AUC-ROC {r.values['auc_roc']:.3f}  AUC-PR {r.values['auc_prc']:.3f}")
d = delong_test(scores["rd"], scores["no_rd"], y)
print(f"DeLong rd vs no_rd: dAUC {d.auc_a - d.auc_b:+.4f}, p = {d.p:.3g}")
