import itertools
from fractions import Fraction
from math import comb

import pytest
from hypothesis import given, settings

from outcome_audit.experiment import StratifiedExperiment, example1, example2
from outcome_audit.inference import (
    Decision,
    DecisionCache,
    EnumerationCapExceeded,
    NullSpec,
    chisq_quantile,
    decide,
    exact_randomization_pvalue,
    mh_decision,
    mh_moments,
    mh_statistic,
    neyman_decision,
    neyman_statistic,
    neyman_varhat,
)

from conftest import experiments


def enumerate_assignments(exp):
    """Every within-stratum assignment, as flat treated vectors."""
    per = []
    for s in exp.strata:
        per.append([
            [1 if j in chosen else 0 for j in range(s.n)]
            for chosen in itertools.combinations(range(s.n), s.m)
        ])
    for combo in itertools.product(*per):
        yield [z for piece in combo for z in piece]


class TestChiSquareQuantile:
    def test_five_percent(self):
        q = chisq_quantile(Fraction(1, 20))
        assert abs(float(q) - 3.841458820694124) < 1e-13

    def test_monotone(self):
        assert chisq_quantile("0.01") > chisq_quantile("0.05") > chisq_quantile("0.1")

    def test_range(self):
        with pytest.raises(ValueError):
            chisq_quantile(0)


class TestSharpNull:
    def test_example1_moments(self):
        exp = example1()
        mean, var = mh_moments(exp, exp.outcome)
        assert mh_statistic(exp, exp.outcome) == 1
        assert mean == Fraction(1, 1001)
        assert var == Fraction(1000, 1001**2)

    def test_example1_rejects(self):
        assert mh_decision(example1(), example1().outcome, Fraction(1, 20)).decision is Decision.REJECT

    def test_never_reject_design(self):
        exp = StratifiedExperiment.from_vectors([[1, 1, 0, 0]], [[0, 0, 0, 0]])
        best = Fraction(0)
        for y in itertools.product((0, 1), repeat=4):
            d = mh_decision(exp, y, Fraction(1, 20))
            assert d.decision is Decision.ACCEPT
            if not d.degenerate:
                best = max(best, d.statistic)
        assert best == 3

    def test_zero_variance_accepts(self):
        exp = StratifiedExperiment.from_vectors([[1, 0]], [[1, 1]])
        d = mh_decision(exp, exp.outcome, Fraction(1, 20))
        assert d.degenerate and d.decision is Decision.ACCEPT

    @settings(max_examples=60, deadline=None)
    @given(experiments(max_strata=3, max_size=5, max_total=10))
    def test_moments_match_enumeration(self, exp):
        y = exp.outcome
        values = [sum(z * v for z, v in zip(zs, y)) for zs in enumerate_assignments(exp)]
        count = len(values)
        mean = Fraction(sum(values), count)
        var = Fraction(sum(v * v for v in values), count) - mean**2
        assert mh_moments(exp, y) == (mean, var)


class TestWeakNull:
    def test_known_values(self):
        exp = StratifiedExperiment.from_vectors([[1, 1, 0, 0]], [[1, 0, 0, 0]])
        assert neyman_statistic(exp, exp.outcome) == Fraction(1, 2)
        assert neyman_varhat(exp, exp.outcome) == Fraction(1, 4)

    def test_arm_size_precondition(self):
        exp = StratifiedExperiment.from_vectors([[1, 0, 0]], [[1, 0, 0]])
        with pytest.raises(ValueError, match="at least two"):
            neyman_decision(exp, exp.outcome, Fraction(1, 20))

    def test_exact_weak_combination_rejected(self):
        with pytest.raises(ValueError):
            NullSpec("weak", Fraction(1, 20), "exact")


class TestExactPValue:
    def test_example1(self):
        assert exact_randomization_pvalue(example1(), example1().outcome) == Fraction(1, 1001)

    @pytest.mark.parametrize("study, p", [(1, Fraction(1, 144)), (2, Fraction(1, 100))])
    def test_example2(self, study, p):
        exp = example2(study)
        assert exact_randomization_pvalue(exp, exp.outcome, "one") == p

    @settings(max_examples=40, deadline=None)
    @given(experiments(max_strata=3, max_size=5, max_total=10))
    def test_matches_literal_enumeration(self, exp):
        y = exp.outcome
        obs = sum(z * v for z, v in zip(exp.treated, y))
        mean, _ = mh_moments(exp, y)
        stats = [sum(z * v for z, v in zip(zs, y)) for zs in enumerate_assignments(exp)]
        one = Fraction(sum(s >= obs for s in stats), len(stats))
        two = Fraction(sum(abs(s - mean) >= abs(obs - mean) for s in stats), len(stats))
        assert exact_randomization_pvalue(exp, y, "one") == one
        assert exact_randomization_pvalue(exp, y, "two") == two

    def test_cap(self):
        exp = StratifiedExperiment.from_vectors([[1] * 10 + [0] * 10], [[0] * 20])
        assert comb(20, 10) > 1000
        with pytest.raises(EnumerationCapExceeded):
            exact_randomization_pvalue(exp, exp.outcome, cap=1000)

    def test_decision_uses_p_at_most_alpha(self):
        exp = example1()
        spec = NullSpec(alpha=Fraction(1, 1001), decision_method="exact")
        assert decide(exp, exp.outcome, spec).decision is Decision.REJECT


class TestDecisionCache:
    @settings(max_examples=40, deadline=None)
    @given(experiments(max_strata=3, max_size=5, max_total=10, min_arm=2))
    def test_agrees_with_decide(self, exp):
        for spec in (NullSpec(), NullSpec("weak"), NullSpec(decision_method="exact", sidedness="two")):
            cache = DecisionCache(exp, spec)
            for y in itertools.islice(itertools.product((0, 1), repeat=exp.N), 0, None, 7):
                assert cache.decision(y) is decide(exp, y, spec).decision
