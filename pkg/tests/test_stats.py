import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ladderembed.errors import AllZeroDifferences
from ladderembed.stats import holm_bonferroni, wilcoxon_signed_rank
from oracles import brute_wilcoxon_p, holm_adjusted_decisions


class TestWilcoxon:
    def test_all_positive_n5(self):
        res = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
        assert res.p_value == 2 / 32 and res.statistic == 0 and res.exact

    def test_all_zero(self):
        with pytest.raises(AllZeroDifferences):
            wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])

    def test_plus_minus_one(self):
        assert wilcoxon_signed_rank([1, 0], [0, 1]).p_value == 1.0

    def test_zero_differences_dropped(self):
        res = wilcoxon_signed_rank([1, 2, 3, 4, 5, 7], [0, 0, 0, 0, 0, 7])
        assert res.n == 5 and res.p_value == 2 / 32

    @settings(max_examples=120, deadline=None)
    @given(st.lists(st.integers(-4, 4), min_size=1, max_size=12).filter(lambda d: any(d)))
    def test_exact_matches_enumeration_with_ties(self, diffs):
        res = wilcoxon_signed_rank(diffs, [0] * len(diffs))
        assert res.p_value == pytest.approx(brute_wilcoxon_p(diffs), abs=1e-12)
        assert 0 < res.p_value <= 1

    def test_matches_scipy_without_ties(self, rs):
        scipy_stats = pytest.importorskip("scipy.stats")
        a, b = rs.normal(size=14), rs.normal(size=14)
        ours = wilcoxon_signed_rank(a, b)
        ref = scipy_stats.wilcoxon(a, b, method="exact")
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-12)
        assert ours.statistic == ref.statistic

    def test_normal_approximation_for_large_n(self, rs):
        scipy_stats = pytest.importorskip("scipy.stats")
        a, b = rs.normal(size=40) + 0.3, rs.normal(size=40)
        ours = wilcoxon_signed_rank(a, b)
        ref = scipy_stats.wilcoxon(a, b, method="approx", correction=False)
        assert not ours.exact
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)


class TestHolm:
    def test_both_rejected(self):
        assert holm_bonferroni([0.01, 0.04], 0.05) == [True, True]

    def test_none_rejected(self):
        assert holm_bonferroni([0.03, 0.04], 0.05) == [False, False]

    def test_single_boundary(self):
        assert holm_bonferroni([0.05], 0.05) == [True]

    def test_empty(self):
        assert holm_bonferroni([]) == []

    def test_original_order(self):
        assert holm_bonferroni([0.02, 0.001, 0.3], 0.05) == [True, True, False]
        assert holm_bonferroni([0.04, 0.001, 0.3], 0.05) == [False, True, False]

    @given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=15), st.sampled_from([0.01, 0.05, 0.1]))
    def test_matches_adjusted_p_values_and_is_monotone(self, p, alpha):
        got = holm_bonferroni(p, alpha)
        assert got == holm_adjusted_decisions(p, alpha)
        for i, pi in enumerate(p):
            if got[i]:
                assert all(got[j] for j, pj in enumerate(p) if pj < pi)
