"""Shared builders for model tests: random cohorts, batches and a finite-difference check."""
import numpy as np

from sard.corpus import CodeVocab, Cohort, PatientRecord, Visit
from sard.losses import LossSpec
from sard.model import SardConfig, init_model, model_gradient, pack_cohort, forward


def random_cohort(rng, n=5, n_codes=6, max_visits=8, prediction_day=500):
    vocab = CodeVocab([f"k{i}" for i in range(n_codes)])
    recs = []
    for i in range(n):
        nv = int(rng.integers(1, max_visits + 1))
        days = np.sort(rng.choice(prediction_day + 1, nv, replace=False))
        visits = [Visit(int(d), rng.choice(vocab.codes, int(rng.integers(1, 4)), replace=False)) for d in days]
        recs.append(PatientRecord(f"p{i}", visits, int(rng.integers(0, 2))))
    recs[0] = PatientRecord("p0", recs[0].visits, 1)
    recs[-1] = PatientRecord(recs[-1].patient_id, recs[-1].visits, 0) if n > 1 else recs[-1]
    return Cohort(prediction_day, recs, vocab)


def small_config(encoder="self_attention", head="conv", **kw):
    base = dict(d_e=8, n_v=6, L=2, H=2, K=2, dropout_p=0.0, encoder_variant=encoder, head_variant=head)
    base.update(kw)
    return SardConfig(**base)


def gradient_check(model, batch, spec, labels, teacher_p, h=1e-4):
    """Relative error ||fd - g|| / max(||fd|| + ||g||, 1e-6) for every parameter."""
    _, grads = model_gradient(model, batch, spec, labels, teacher_p)

    def loss():
        from sard.losses import per_example_loss
        return per_example_loss(spec, forward(model, batch).p.data, labels, teacher_p).mean()

    errs = {}
    for name, arr in model.params.items():
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            down = loss()
            arr[idx] = old
            fd[idx] = (up - down) / (2 * h)
        errs[name] = float(np.linalg.norm(fd - grads[name]) / max(np.linalg.norm(fd) + np.linalg.norm(grads[name]), 1e-6))
    return errs


def random_gradient_case(encoder, head, seed):
    rng = np.random.default_rng(seed)
    cohort = random_cohort(rng, n=4)
    config = small_config(encoder, head)
    model = init_model(config, len(cohort.vocab), seed)
    batch = pack_cohort(cohort, config)
    kind = ("rd", "ce", "tune")[seed % 3]
    spec = LossSpec(kind, p_c=float(rng.uniform(0.5, 3.0)), alpha=0.3)
    return model, batch, spec, cohort.labels, rng.uniform(0.05, 0.95, len(cohort))


def lemma_task(seed=0, n_patients=200):
    """A 20-code planted cohort on windows {30, inf} and its exact linear teacher."""
    import math
    from sard.synthgen import default_planted_params, gen_claims_cohort
    from sard.windowed_linear import LinearModel
    params = default_planted_params(
        n_patients=n_patients, vocab_size=20,
        planted_weights={30: {"c005": 2.0, "c011": 1.5, "c017": 1.5}, math.inf: {"c002": 1.0, "c008": -1.0}})
    cohort = gen_claims_cohort(params, seed)
    teacher = LinearModel(params.weight_vector(), params.intercept, math.inf, params.planted_windows)
    return cohort, teacher
