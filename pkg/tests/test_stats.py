import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from oodspectrum.errors import DegenerateReference, DegenerateSample, DomainError, SampleTooSmall
from oodspectrum.stats import (
    AccuracySample,
    bh_adjust,
    binomial_above_chance,
    cohens_d,
    empirical_logit,
    glass_delta,
    lilliefors,
    mann_whitney_u,
    normality_tests,
    TestResult,
)


class TestEmpiricalLogit:
    def test_all_correct_nine_trials(self):
        assert empirical_logit(1.0, 9) == pytest.approx(math.log(19), abs=1e-12)

    def test_half_is_near_zero(self):
        assert abs(empirical_logit(0.5, 999)) < 1e-3

    def test_monotone(self):
        assert empirical_logit(0.8, 50) > empirical_logit(0.6, 50)

    @pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan")])
    def test_out_of_range(self, bad):
        with pytest.raises(DomainError):
            empirical_logit(bad, 10)

    @given(st.floats(0, 1), st.integers(1, 5000))
    def test_odd_symmetry(self, a, n):
        assert empirical_logit(a, n) == pytest.approx(-empirical_logit(1 - a, n), abs=1e-9)


class TestGlassDelta:
    def test_arithmetic_example(self):
        res = glass_delta(_LogitSample([0.0, 1.0]), _LogitSample([1.0, 2.0, 3.0]))
        assert res.delta == pytest.approx(-1.5, abs=1e-12)
        assert res.reference_sd == pytest.approx(1.0)
        assert res.delta == (res.mean_logit_distorted - res.reference_mean) / res.reference_sd

    def test_equal_samples_zero(self):
        s = AccuracySample.from_counts([90, 95, 80], [100, 100, 100])
        assert glass_delta(s, s).delta == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_reference(self):
        ref = AccuracySample.from_counts([90, 90], [100, 100])
        with pytest.raises(DegenerateReference):
            glass_delta(ref, ref)

    @given(st.lists(st.floats(-4, 4), min_size=2, max_size=8),
           st.lists(st.floats(-4, 4), min_size=2, max_size=8),
           st.floats(-3, 3), st.floats(0.1, 5))
    def test_affine_invariance(self, d, r, shift, scale):
        if np.std(r, ddof=1) < 1e-3:
            return
        base = glass_delta(_LogitSample(d), _LogitSample(r)).delta
        moved = glass_delta(_LogitSample(np.array(d) * scale + shift), _LogitSample(np.array(r) * scale + shift)).delta
        assert moved == pytest.approx(base, rel=1e-7, abs=1e-7)


class _LogitSample:
    """Minimal stand-in exposing precomputed logits."""

    def __init__(self, logits):
        self.logits = np.asarray(logits, float)

    def __len__(self):
        return len(self.logits)


class TestMannWhitney:
    def test_floor_value_for_separated_groups(self):
        res = mann_whitney_u([0.1, 0.2, 0.3, 0.4], np.linspace(0.5, 0.99, 28))
        assert res.statistic == 0
        assert res.p_value == pytest.approx(0.001565, abs=1e-6)

    def test_matches_scipy_with_ties(self, rng):
        x = rng.integers(0, 5, 12).astype(float)
        y = rng.integers(1, 6, 17).astype(float)
        ours = mann_whitney_u(x, y)
        ref = sps.mannwhitneyu(x, y, alternative="two-sided", use_continuity=True, method="asymptotic")
        assert ours.statistic == ref.statistic
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-10)

    @pytest.mark.parametrize("alt", ["greater", "less"])
    def test_one_sided_matches_scipy(self, rng, alt):
        x, y = rng.normal(0.3, 1, 9), rng.normal(0, 1, 14)
        ref = sps.mannwhitneyu(x, y, alternative=alt, use_continuity=True, method="asymptotic")
        assert mann_whitney_u(x, y, alt).p_value == pytest.approx(ref.pvalue, rel=1e-10)

    def test_exact_matches_scipy(self, rng):
        x, y = rng.normal(0, 1, 5), rng.normal(1, 1, 7)
        ref = sps.mannwhitneyu(x, y, alternative="two-sided", method="exact")
        assert mann_whitney_u(x, y, exact=True).p_value == pytest.approx(ref.pvalue, rel=1e-12)

    @given(st.lists(st.integers(0, 6), min_size=1, max_size=10), st.lists(st.integers(0, 6), min_size=1, max_size=10))
    def test_swap_symmetry(self, x, y):
        assert mann_whitney_u(x, y).p_value == pytest.approx(mann_whitney_u(y, x).p_value, abs=1e-12)

    def test_all_tied(self):
        assert mann_whitney_u([1, 1], [1, 1, 1]).p_value == 1.0

    def test_empty_sample(self):
        with pytest.raises(DomainError):
            mann_whitney_u([], [1.0])


class TestBinomial:
    def test_k_zero(self):
        assert binomial_above_chance(0, 100, 1 / 16).p_value == 1.0

    def test_k_equals_n(self):
        assert binomial_above_chance(12, 12, 1 / 16).p_value == (1 / 16) ** 12

    def test_matches_scipy(self):
        for k in (3, 10, 40, 77):
            ref = sps.binom.sf(k - 1, 640, 1 / 16)
            assert binomial_above_chance(k, 640, 1 / 16).p_value == pytest.approx(ref, rel=1e-9)

    def test_tiny_tail_stays_positive_in_log(self):
        res = binomial_above_chance(600, 640, 1 / 16)
        assert res.details["log_p"] < -1000

    def test_nonincreasing_in_k(self):
        ps = [binomial_above_chance(k, 50, 0.2).p_value for k in range(51)]
        assert all(a >= b for a, b in zip(ps, ps[1:]))


class TestBH:
    def test_equal_adjusted(self):
        assert bh_adjust([0.01, 0.02, 0.03, 0.04]) == pytest.approx([0.04] * 4, abs=1e-15)

    def test_single_value(self):
        assert bh_adjust([0.3]) == [0.3]

    def test_against_statsmodels(self, rng):
        multitest = pytest.importorskip("statsmodels.stats.multitest")
        p = rng.random(40) ** 3
        ref = multitest.multipletests(p, method="fdr_bh")[1]
        assert np.allclose(bh_adjust(p), ref, atol=1e-14)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_properties(self, p):
        adj = np.array(bh_adjust(p))
        p = np.array(p)
        assert np.all(adj >= p - 1e-15) and np.all(adj <= 1)
        order = np.argsort(p, kind="mergesort")
        assert np.all(np.diff(adj[order]) >= -1e-15)


class TestCohensD:
    def test_arithmetic(self):
        assert cohens_d([0, 1], [2, 3]) == pytest.approx(-2 / math.sqrt(0.5), abs=1e-12)

    def test_identical_zero(self):
        assert cohens_d([1, 2, 4], [1, 2, 4]) == 0.0

    def test_degenerate(self):
        with pytest.raises(DegenerateSample):
            cohens_d([1, 1], [1, 1])


class TestNormality:
    def test_normal_sample_passes(self):
        x = np.random.default_rng(0).standard_normal(28)
        results = normality_tests(x, seed=0)
        assert [r.method for r in results] == ["shapiro_wilk", "dagostino_pearson", "lilliefors"]
        assert all(r.p_value > 0.05 for r in results)

    def test_skewed_sample_rejected(self):
        x = 1 - np.random.default_rng(4).exponential(0.02, 28)
        assert normality_tests(x)[0].p_value < 0.05

    def test_too_small(self):
        with pytest.raises(SampleTooSmall):
            normality_tests([0.1, 0.2, 0.3])

    def test_lilliefors_deterministic_and_near_statsmodels(self):
        diag = pytest.importorskip("statsmodels.stats.diagnostic")
        x = np.random.default_rng(5).standard_normal(30) ** 2
        a, b = lilliefors(x, seed=1), lilliefors(x, seed=1)
        assert a.p_value == b.p_value
        stat, p = diag.lilliefors(x, dist="norm", pvalmethod="table")
        assert a.statistic == pytest.approx(stat, abs=1e-12)
        assert a.p_value == pytest.approx(p, abs=0.02)


def test_result_rejects_bad_p():
    with pytest.raises(DomainError):
        TestResult(0.0, 1.5, "x")


def test_lilliefors_size_under_normal_null():
    gen = np.random.default_rng(11)
    rejections = sum(lilliefors(gen.standard_normal(28), n_sim=1000, seed=i).p_value < 0.05 for i in range(200))
    assert 0.02 <= rejections / 200 <= 0.09


def test_binomial_edge_cases_carry_log_p():
    assert binomial_above_chance(0, 10, 0.25).details["log_p"] == 0.0
    assert binomial_above_chance(10, 10, 0.25).details["log_p"] == pytest.approx(10 * math.log(0.25))
