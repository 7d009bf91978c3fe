import math

import numpy as np
import pytest

from sard.evaluation import logit, spearman
from sard.lemma import (construct_replicating_sard, fourier_window_coeffs, indicator_approx, lemma_sweep,
                        quadrature_coeffs, replication_error, shifted_window, write_sweep_csv)
from sard.model import SardModel, encode, head_forward, pack_cohort, predict_proba
from sard.training import teacher_probs
from sard.windowed_linear import LinearModel, WindowSet
from helpers import lemma_task


class TestCoefficients:
    def test_full_period_is_constant(self):
        fw = fourier_window_coeffs(400, 400, 10)
        assert fw.a0 == 1.0
        assert np.allclose(fw.a, 0, atol=1e-15) and np.allclose(fw.b, 0, atol=1e-15)

    def test_half_period_first_sine(self):
        fw = fourier_window_coeffs(200, 400, 1)
        assert fw.b[0] == pytest.approx(2 / math.pi, abs=1e-15)
        assert quadrature_coeffs(200, 400, 1)[1] == pytest.approx(2 / math.pi, abs=1e-12)

    @pytest.mark.parametrize("T,P", [(30, 400), (137.5, 400), (90, 365), (364, 365), (1, 50)])
    def test_quadrature(self, T, P):
        fw = fourier_window_coeffs(T, P, 100)
        for n in (1, 2, 3, 7, 19, 50, 100):
            a, b = quadrature_coeffs(T, P, n)
            assert fw.a[n - 1] == pytest.approx(a, abs=1e-8)
            assert fw.b[n - 1] == pytest.approx(b, abs=1e-8)

    def test_cosine_coefficient_uses_double_angle(self):
        # sin(n pi T / P) / (n pi) disagrees with quadrature; sin(2 n pi T / P) / (n pi) agrees
        T, P = 30.0, 400.0
        a, _ = quadrature_coeffs(T, P, 1)
        assert abs(math.sin(math.pi * T / P) / math.pi - a) > 0.01
        assert abs(math.sin(2 * math.pi * T / P) / math.pi - a) < 1e-10

    def test_invalid(self):
        for args in ((0, 10, 3), (11, 10, 3), (5, 10, 0), (5, math.inf, 3)):
            with pytest.raises(ValueError):
                fourier_window_coeffs(*args)


class TestSeries:
    def test_interior_and_exterior(self):
        fw = fourier_window_coeffs(100, 400, 200)
        assert abs(indicator_approx(50, fw) - 1) < 0.01
        assert abs(indicator_approx(250, fw)) < 0.01

    def test_convergence_away_from_jumps(self):
        T, P = 100.0, 400.0
        t = np.linspace(0, P, 4001)
        keep = (np.abs(t - T) > P / 50) & (t > P / 50) & (t < P - P / 50)
        target = (t <= T).astype(float)
        errs = [np.max(np.abs(indicator_approx(t[keep], fourier_window_coeffs(T, P, n)) - target[keep]))
                for n in (25, 50, 100)]
        assert errs[0] >= errs[1] >= errs[2]

    def test_shift_identity(self):
        T, D, P = 30.0, 16.0, 400.0
        a0, cos_c, sin_c, w = shifted_window(T, 40, P, D)
        t = np.linspace(0, 300, 301)
        shifted = indicator_approx(t + D, fourier_window_coeffs(T + 0.5 + D, P, 40))
        direct = a0 + np.cos(np.outer(t, w)) @ cos_c + np.sin(np.outer(t, w)) @ sin_c
        assert np.allclose(direct, shifted, atol=1e-12)


@pytest.fixture(scope="module")
def task():
    return lemma_task(0)


class TestConstruction:
    def test_infinite_window_exact(self, task):
        cohort, _ = task
        w = np.zeros(20)
        w[[2, 8, 13]] = [1.0, -1.0, 0.5]
        teacher = LinearModel(w, -0.3, math.inf, WindowSet((None,)))
        for n_freq in (1, 8):
            mx, _, _ = replication_error(construct_replicating_sard(teacher, cohort.vocab, n_freq, 32), teacher, cohort)
            assert mx < 1e-6

    def test_acceptance_point(self, task):
        cohort, teacher = task
        model = construct_replicating_sard(teacher, cohort.vocab, 64, max(len(r.visits) for r in cohort.records))
        mx, _, rho = replication_error(model, teacher, cohort)
        assert rho >= 0.999 and mx <= 0.02

    def test_error_shrinks_with_frequencies(self, task):
        cohort, teacher = task
        rows = lemma_sweep(teacher, cohort, (16, 32, 64))
        means = [r["mean_err"] for r in rows]
        assert means[0] > means[1] > means[2]

    def test_is_plain_sard_model(self, task):
        cohort, teacher = task
        model = construct_replicating_sard(teacher, cohort.vocab, 16, 40)
        assert isinstance(model, SardModel) and model.config.L == 1
        b = pack_cohort(cohort, model.config)
        via_parts = head_forward(encode(b, model), b.mask, model)
        assert np.array_equal(via_parts, predict_proba(model, b))
        # attention invariants hold for the constructed weights too
        from sard.model import forward
        a = forward(model, b).attention[0]  # (N, H, n_v, n_v)
        live = np.broadcast_to(b.mask[:, None, :], a.shape[:3])
        assert np.allclose(a.sum(-1)[live], 1.0, atol=1e-12)
        assert np.all(a.sum(-1)[~live] == 0.0)

    def test_rejects_window_beyond_clip(self, task):
        cohort, _ = task
        t = LinearModel(np.r_[np.ones(20), np.zeros(20)], 0.0, 1.0, WindowSet((400, None)))
        with pytest.raises(ValueError, match="clipping"):
            construct_replicating_sard(t, cohort.vocab, 8, 8)

    def test_rejects_empty_teacher(self, task):
        cohort, _ = task
        with pytest.raises(ValueError):
            construct_replicating_sard(LinearModel(np.zeros(40), 0.0, 1.0, WindowSet((30, None))), cohort.vocab, 8, 8)


class TestReplicationError:
    def test_self(self, task):
        cohort, teacher = task
        assert replication_error(teacher, teacher, cohort) == (0.0, 0.0, 1.0)

    def test_recomputation(self, task):
        cohort, teacher = task
        model = construct_replicating_sard(teacher, cohort.vocab, 16, 40)
        mx, mean, rho = replication_error(model, teacher, cohort)
        ps = np.array([predict_proba(model, pack_cohort(cohort.subset([i]), model.config))[0]
                       for i in range(len(cohort))])
        pt = teacher_probs(teacher, cohort)
        assert mx == pytest.approx(np.max(np.abs(ps - pt)), abs=1e-15)
        assert mean == pytest.approx(np.mean(np.abs(ps - pt)), abs=1e-15)
        assert rho == pytest.approx(spearman(logit(ps, 1e-300), logit(pt, 1e-300), 1e-6), abs=1e-12)

    def test_sweep_csv(self, task, tmp_path):
        cohort, teacher = task
        rows = lemma_sweep(teacher, cohort.subset(range(20)), (4, 8), sharpness=(5.0, 20.0))
        write_sweep_csv(rows, tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "n_freq,sharpness,max_err,mean_err,spearman" and len(lines) == 5
