"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single ``criterion N: PASS|FAIL ...`` line with the
measured numbers before asserting. Studies are cached so the bound-check
criterion can pool the ratios of every run made here.
"""

import functools

import pytest

from blockcyclic import algorithms as alg, experiments as ex

pytestmark = pytest.mark.slow


@functools.lru_cache(maxsize=None)
def rate_study():
    return ex.rate_in_T()


@functools.lru_cache(maxsize=None)
def speedup_study():
    return ex.speedup_in_N()


@functools.lru_cache(maxsize=None)
def mc_rate_study():
    return ex.rate_in_T(alg.MC_PSGD, M=4)


@functools.lru_cache(maxsize=None)
def ordering_study():
    return ex.qualitative_ordering(shuffled=True)


@functools.lru_cache(maxsize=None)
def m_sweep_study():
    return ex.robustness_to_M()


@pytest.fixture
def verdict(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return emit


def fmt(values):
    return "(" + ", ".join(f"{v:.4g}" for v in values) + ")"


def test_criterion_1_rate_in_T(verdict):
    study = rate_study()
    ok = study.passed and study.seconds < 120 and study.preconditions_hold
    verdict(1, ok, f"slope {study.slope:.3f} in {study.window}, medians {fmt(study.medians)} at T={study.Ts}, "
                   f"{study.seconds:.1f}s, K>CMN {study.preconditions_hold}")
    assert study.preconditions_hold
    assert study.window[0] <= study.slope <= study.window[1]
    assert study.seconds < 120


def test_criterion_2_speedup_in_N(verdict):
    study = speedup_study()
    verdict(2, study.passed, f"median gaps {fmt(study.medians)} at N={study.Ns}")
    assert study.passed


def test_criterion_3_mc_per_block_rate(verdict):
    study = mc_rate_study()
    lo, hi = study.window
    ok = all(lo <= s <= hi for s in study.block_slopes) and study.preconditions_hold
    verdict(3, ok, f"per-block slopes {fmt(study.block_slopes)} in {study.window}")
    assert study.preconditions_hold
    assert all(lo <= s <= hi for s in study.block_slopes)


def test_criterion_4_deviation_bound(verdict):
    parts = {
        "rate": rate_study().lemma3_worst,
        "speedup": speedup_study().lemma3_worst,
        "mc-rate": mc_rate_study().lemma3_worst,
        "ordering": max(r.lemma3_worst for r in ordering_study().runs),
        "m-sweep": max(r.lemma3_worst for r in m_sweep_study().runs),
    }
    worst = max(parts.values())
    verdict(4, worst <= 1.0, "worst ratio " + ", ".join(f"{k} {v:.3g}" for k, v in parts.items()))
    assert worst <= 1.0


def test_criterion_5_variance_scaling(verdict):
    study = ex.variance_scaling()
    verdict(5, study.passed, "variance by N " + ", ".join(f"{N}: {v:.4g}" for N, v in study.table))
    assert study.passed


def test_criterion_6_reductions(verdict):
    study = ex.reductions()
    verdict(6, study.passed, f"mm(M=1) == fedavg bitwise {study.mm_equals_fedavg}, "
                             f"sequential descent max deviation {study.max_deviation:.3g}")
    assert study.mm_equals_fedavg
    assert study.max_deviation <= 1e-10


def test_criterion_7_predictor_identity(verdict):
    study = ex.predictor_identity()
    verdict(7, study.passed, f"max |predictor - replayed mean| {study.max_deviation:.3g}")
    assert study.max_deviation <= 1e-10


def test_criterion_8_qualitative_ordering(verdict):
    study = ordering_study()
    rows = "; ".join(
        f"seed {r.seed}: fedavg {r.losses['fedavg']:.3f} mm {r.losses['mm-psgd']:.3f} mc {r.losses['mc-psgd']:.3f} "
        f"shuffled {r.shuffled_fedavg_loss:.3f} osc x{r.oscillation_ratio:.1f}"
        for r in study.runs
    )
    verdict(8, study.passed, f"{study.passing_seeds}/{len(study.runs)} seeds pass ({rows})")
    assert study.passing_seeds >= 4


def test_criterion_9_robustness_to_M(verdict):
    study = m_sweep_study()
    rows = "; ".join(
        f"seed {r.seed}: mm spread {r.mm_spread:.3f}, fedavg osc {fmt(r.fedavg_oscillations)}" for r in study.runs
    )
    verdict(9, study.passed, f"{study.passing_seeds}/{len(study.runs)} seeds pass at M={study.runs[0].Ms} ({rows})")
    assert study.passing_seeds >= 4


def test_criterion_10_determinism(verdict):
    study = ex.determinism()
    verdict(10, study.passed, ", ".join(f"{k} identical {v}" for k, v in study.identical.items()))
    assert study.passed
