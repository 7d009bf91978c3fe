"""
Looking inside a trained network
================================

Two views of a pre-trained model.  Visit importance splits the head's
linear output across the visits that won each kernel's max-pool.  Network
dissection binarizes each kernel's activation and matches it to the
teacher's non-zero windowed features by Matthews correlation.
"""
import math
import sys

import numpy as np

from sard.corpus import split_cohort
from sard.introspection import attention_maps, dissect, visit_importance
from sard.model import SardConfig, init_model
from sard.synthgen import default_planted_params, gen_claims_cohort
from sard.training import DESK_LAMBDA_GRID, TrainConfig, pretrain_rd
from sard.windowed_linear import WindowSet, featurize_cohort, fit_best_lambda

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

cohort = gen_claims_cohort(default_planted_params(n_patients=2000), seed)
train, val, test = split_cohort(cohort, (0.5, 0.25, 0.25), seed)
ws = WindowSet((30, math.inf))
teacher, _ = fit_best_lambda(featurize_cohort(train, ws), train.labels,
                             featurize_cohort(val, ws), val.labels, DESK_LAMBDA_GRID)
teacher.window_set = ws

cfg = SardConfig(d_e=32, n_v=16, L=2, H=2, K=10, dropout_p=0.05)
tc = TrainConfig(batch_size=100, micro_batch=100, max_epochs=50, patience=5, lr=5e-3, seed=seed)
model, _ = pretrain_rd(init_model(cfg, len(cohort.vocab), seed), teacher, train, val, tc)

###############################################################################
# Visit importance for the test patient with the longest history.
rec = max(test.records, key=lambda r: len(r.visits))
vi = visit_importance(model, rec, test)
print(f"patient {rec.patient_id}: {int(vi.mask.sum())} packed visits, total importance {vi.total:+.3f}")
for j in np.argsort(-np.abs(vi.scores))[:5]:
    if vi.mask[j]:
        visit = rec.visits[::-1][j]
        print(f"  {vi.days_before[j]:4d} days before: {sorted(visit.codes)}  s={vi.scores[j]:+.3f}")

att = attention_maps(model, rec, test)
print(f"attention maps {att.shape}; each live row sums to 1")

###############################################################################
# Dissection.
rep = dissect(model, teacher, test)
print(f"{rep.n_unique} of {rep.nonzero.size} non-zero teacher features matched ({rep.percent:.0f}%)")
for k, (f, m) in enumerate(zip(rep.features, rep.mcc)):
    name = rep.names[list(rep.nonzero).index(f)] if f >= 0 else "-"
    print(f"  kernel {k}: {name:>10s}  MCC {m:.3f}")
