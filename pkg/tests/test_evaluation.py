import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sard.evaluation import (MetricReport, auc_prc, auc_roc, delong_test, logit, mann_whitney, mcc, mcc_matrix,
                             ppv_at_sensitivity, score_report, spearman)
import oracles


def _instance(rng, n=50, levels=None):
    s = rng.integers(0, levels, n).astype(float) if levels else rng.normal(size=n)
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    return s, y


class TestAuc:
    def test_trivial(self):
        assert auc_roc([0.9, 0.1], [1, 0]) == 1.0
        assert auc_roc(np.ones(6), [0, 1, 0, 1, 1, 0]) == 0.5

    @pytest.mark.parametrize("levels", [None, 5])
    def test_pairwise_oracle(self, levels):
        rng = np.random.default_rng(11)
        for _ in range(20):
            s, y = _instance(rng, levels=levels)
            assert auc_roc(s, y) == pytest.approx(oracles.auc_pairs(s, y), abs=1e-12)

    def test_needs_both_classes(self):
        with pytest.raises(ValueError):
            auc_roc([0.1, 0.2], [1, 1])
        with pytest.raises(ValueError):
            auc_roc([0.1, 0.2, 0.3], [1, 0])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(-500, 500), min_size=4, max_size=40, unique=True), st.integers(0, 10 ** 6))
    def test_monotone_invariance_and_flip(self, xs, seed):
        s = np.array(xs, dtype=float) / 10
        y = np.random.default_rng(seed).integers(0, 2, s.size)
        y[:2] = [0, 1]
        a = auc_roc(s, y)
        assert auc_roc(np.exp(s / 10) * 3 - 1, y) == pytest.approx(a, abs=1e-12)
        assert a + auc_roc(s, 1 - y) == pytest.approx(1.0, abs=1e-12)


class TestPrc:
    def test_trivial(self):
        assert auc_prc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
        y = np.r_[np.ones(3), np.zeros(7)]
        assert auc_prc(np.zeros(10), y) == pytest.approx(0.3)

    @pytest.mark.parametrize("levels", [None, 4])
    def test_threshold_oracle(self, levels):
        rng = np.random.default_rng(12)
        for _ in range(20):
            s, y = _instance(rng, levels=levels)
            assert auc_prc(s, y) == pytest.approx(oracles.ap_sweep(s, y), abs=1e-12)


class TestPpv:
    def test_trivial(self):
        assert ppv_at_sensitivity([0.9, 0.8, 0.1], [1, 1, 0], 1.0) == 1.0
        y = np.r_[np.ones(2), np.zeros(18)]
        assert ppv_at_sensitivity(np.ones(20), y, 0.5) == pytest.approx(0.1)

    def test_sweep_oracle(self):
        rng = np.random.default_rng(13)
        for levels in (None, 6):
            s, y = _instance(rng, n=200, levels=levels)
            for sens in (0.1, 0.5, 0.77, 1.0):
                assert ppv_at_sensitivity(s, y, sens) == pytest.approx(oracles.ppv_sweep(s, y, sens), abs=1e-12)

    def test_precision_can_rise_with_sensitivity(self):
        # top-ranked patient is negative: precision goes 1/2 -> 2/3 as recall goes 1/2 -> 1
        s, y = [0.9, 0.8, 0.7], [0, 1, 1]
        assert ppv_at_sensitivity(s, y, 0.5) == pytest.approx(0.5)
        assert ppv_at_sensitivity(s, y, 1.0) == pytest.approx(2 / 3)

    def test_threshold_is_highest_qualifying(self):
        # both 0.8 and 0.6 reach recall 1/2; the higher one (precision 1/2) is used
        s, y = [0.9, 0.8, 0.6, 0.1], [0, 1, 0, 1]
        assert ppv_at_sensitivity(s, y, 0.5) == pytest.approx(0.5)


class TestDeLong:
    def test_identical(self):
        rng = np.random.default_rng(0)
        s, y = _instance(rng)
        r = delong_test(s, s, y)
        assert r.z == 0.0 and r.p == 1.0

    def test_auc_shared_estimator(self):
        rng = np.random.default_rng(1)
        s, y = _instance(rng, n=80)
        r = delong_test(s, s + rng.normal(size=80), y)
        assert r.auc_a == pytest.approx(auc_roc(s, y), abs=1e-12)

    def test_bootstrap_agreement(self):
        rng = np.random.default_rng(2024)
        y = rng.integers(0, 2, 100)
        a = y + rng.normal(0, 1.0, 100)
        b = y + rng.normal(0, 1.4, 100)
        p = delong_test(a, b, y).p
        assert abs(p - oracles.bootstrap_delong_p(a, b, y, 10000, 0)) <= 0.02


class TestSpearman:
    def test_trivial(self):
        x = np.arange(10.0)
        assert spearman(x, x) == 1.0
        assert spearman(x, -x) == -1.0

    def test_brute_oracle(self):
        rng = np.random.default_rng(3)
        for levels in (None, 4):
            for _ in range(10):
                x, _ = _instance(rng, 30, levels)
                y = x + rng.normal(size=30)
                assert spearman(x, y) == pytest.approx(oracles.spearman_brute(x, y), abs=1e-12)

    def test_tie_tolerance_merges_round_off(self):
        x = np.array([1.0, 1.0 + 1e-9, 2.0, 3.0])
        y = np.array([5.0, 4.0, 6.0, 7.0])
        assert spearman(x, y) < 1.0
        assert spearman(x, y, tie_tol=1e-6) == pytest.approx(spearman([1, 1, 2, 3], y))


class TestMannWhitney:
    def test_disjoint(self):
        assert mann_whitney([1, 2, 3], [4, 5]).u == 0.0
        assert mann_whitney([4, 5], [1, 2, 3]).u == 6.0

    def test_identical_multisets(self):
        assert mann_whitney([1, 2, 2, 3], [3, 2, 2, 1]).p == pytest.approx(1.0)

    def test_pair_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b = rng.integers(0, 6, 20).astype(float), rng.normal(2.5, 2, 20).round()
            assert mann_whitney(a, b).u == oracles.u_pairs(a, b)


class TestMcc:
    def test_trivial(self):
        a = np.array([1, 0, 1, 1, 0])
        assert mcc(a, a) == 1.0
        assert mcc(a, 1 - a) == -1.0
        assert mcc(np.ones(5), a) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=2, max_size=50))
    def test_symmetric_and_oracle(self, pairs):
        a, b = np.array(pairs).T
        assert mcc(a, b) == mcc(b, a)
        assert mcc(a, b) == pytest.approx(oracles.mcc_counts(a, b), abs=1e-10)

    def test_matrix_matches_pairwise(self):
        rng = np.random.default_rng(5)
        A, B = rng.random((60, 4)) > 0.5, rng.random((60, 3)) > 0.3
        A[:, 0] = True
        M = mcc_matrix(A, B)
        for i in range(4):
            for j in range(3):
                assert M[i, j] == pytest.approx(mcc(A[:, i], B[:, j]), abs=1e-12)


def test_logit_inverts_sigmoid():
    z = np.linspace(-8, 8, 17)
    assert np.allclose(logit(1 / (1 + np.exp(-z))), z, atol=1e-9)


def test_report_round_trip(tmp_path):
    r = score_report([0.2, 0.9, 0.4], [0, 1, 0], "m")
    assert r.values["auc_roc"] == 1.0
    r.to_json(tmp_path / "r.json")
    r.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "metric,value"
    assert isinstance(r, MetricReport)
