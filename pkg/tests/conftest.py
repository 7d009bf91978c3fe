import math

import numpy as np
import pytest

from sard.corpus import CodeVocab, Cohort, PatientRecord, Visit
from sard.synthgen import default_planted_params, gen_claims_cohort


@pytest.fixture(scope="session")
def small_cohort():
    params = default_planted_params(
        n_patients=40, vocab_size=12, mean_visits=5.0,
        planted_weights={30: {"c005": 1.5}, math.inf: {"c002": 1.0, "c008": -1.0}},
        intercept=-0.5,
    )
    return gen_claims_cohort(params, 3)


@pytest.fixture
def toy_cohort():
    vocab = CodeVocab(["A", "B", "C"])
    recs = [
        PatientRecord("p0", [Visit(900, ["A"]), Visit(990, ["B", "C"])], 1, ["sg0"]),
        PatientRecord("p1", [Visit(100, ["C"])], 0),
        PatientRecord("p2", [Visit(995, ["A", "B"])], 0),
    ]
    return Cohort(1000, recs, vocab)


def finite_difference(f, x, h=1e-4):
    """Central differences of the scalar function f with respect to array x (in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-6):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))


# acceptance outcomes, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"AC{n} {status}: {title} | {detail}")
