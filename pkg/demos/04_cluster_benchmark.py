"""
When does imitating a sparse model help?
========================================

Two Gaussian clusters in K dimensions, of which only beta*K carry signal.
Four procedures share a small MLP: plain training, distillation from an L1
logistic regression then fine-tuning, training on the L1-selected features
only, and training on the truly informative features (the oracle).  The
advantage of distillation should fade as the signal spreads over more
features.
"""
import sys

import numpy as np

from sard.synthgen import ClusterParams, gen_cluster_splits
from sard.training import PROCEDURES, MLPConfig, run_appendixF_procedures

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
mlp = MLPConfig()

print("beta   " + "  ".join(f"{p:>15s}" for p in PROCEDURES))
for beta in (0.02, 0.1, 0.5, 1.0):
    aucs = []
    for seed in range(n_seeds):
        splits = gen_cluster_splits(ClusterParams(beta=beta), seed, mlp.n_val, mlp.n_test)
        out, _ = run_appendixF_procedures(splits, mlp, seed)
        aucs.append([out[p] for p in PROCEDURES])
    med = np.median(aucs, axis=0)
    print(f"{beta:<5g}  " + "  ".join(f"{v:15.4f}" for v in med))
