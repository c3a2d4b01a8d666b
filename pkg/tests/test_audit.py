import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from outcome_audit.audit import (
    BudgetExceeded,
    SubjectRef,
    design_accuracy,
    draw_outcomes,
    exact_design_accuracy,
    expected_misclassification_table,
    optimal_weight_profiles,
    relative_risk,
    sensitive_set,
    sensitivity_weights,
    warning_accuracy,
)
from outcome_audit.experiment import StratifiedExperiment, example1, example2, load_experiment
from outcome_audit.formulation import Formulation
from outcome_audit.inference import Decision, NullSpec
from outcome_audit.solver import NOT_OVERTURNABLE, SolverBudget, brute_force_wa

from conftest import experiments

NEVER = StratifiedExperiment.from_vectors([[1, 1, 0, 0]], [[0, 1, 0, 1]])
EXACT = NullSpec(decision_method="exact")


class TestWarningAccuracy:
    def test_example1(self):
        report = warning_accuracy(example1())
        assert report.warning_accuracy == Fraction(1000, 1001)
        assert report.minimal_alteration_number == 1
        assert report.weights.as_tuple() == (1, 0, 0, 0)
        assert report.sensitive_set == (SubjectRef("s1", 0),)
        assert report.formulation_used is Formulation.P1
        assert report.measured_decision.decision is Decision.REJECT
        assert 0 < report.chisq_tail < 0.05

    @pytest.mark.parametrize("study, p, wa, man", [(1, Fraction(1, 144), Fraction(16, 17), 1),
                                                   (2, Fraction(1, 100), Fraction(15, 17), 2)])
    def test_example2_exact(self, study, p, wa, man):
        report = warning_accuracy(example2(study), EXACT)
        assert (report.p_value, report.warning_accuracy, report.minimal_alteration_number) == (p, wa, man)
        assert report.formulation_used is Formulation.BRUTE_FORCE
        assert report.solver is None

    @pytest.mark.parametrize("study", [1, 2])
    def test_example2_chisq_secondary(self, study):
        # derived fixture: the chi-square decision gives 15/17 for both studies
        report = warning_accuracy(example2(study))
        assert report.warning_accuracy == Fraction(15, 17)
        assert report.warning_accuracy == brute_force_wa(example2(study)).warning_accuracy

    def test_not_overturnable(self):
        report = warning_accuracy(NEVER)
        assert report.warning_accuracy is NOT_OVERTURNABLE
        assert report.sensitive_set == () and report.weights is None
        assert report.minimal_alteration_number is None
        assert not report.overturnable

    def test_rows_from_file(self):
        exp = load_experiment("stratum,treated,outcome\na,0,0\na,1,1\n" + "a,0,0\n" * 30)
        report = warning_accuracy(exp)
        assert report.sensitive_set == (SubjectRef("a", 1, 2),)

    def test_formulation_override(self):
        exp = StratifiedExperiment.from_vectors([[1, 1, 0, 0]] * 3, [[1, 1, 0, 0]] * 3)
        a = warning_accuracy(exp, formulation="P1")
        b = warning_accuracy(exp, formulation=Formulation.P2)
        assert a.warning_accuracy == b.warning_accuracy
        with pytest.raises(ValueError, match="does not match"):
            warning_accuracy(exp, formulation="P3")

    def test_budget_exceeded_is_a_bound(self):
        exp = StratifiedExperiment.from_vectors(
            [[0, 1], [1, 1, 1, 0], [1, 0, 1, 1]], [[0, 0], [0, 0, 1, 0], [0, 0, 1, 0]]
        )
        report = warning_accuracy(exp, budget=SolverBudget(max_nodes=2), formulation="P1")
        assert report.budget_exceeded
        assert report.warning_accuracy is None
        assert report.sensitive_set == ()
        if report.accuracy_lower_bound is not None:
            assert report.accuracy_lower_bound <= warning_accuracy(exp).warning_accuracy

    @settings(max_examples=60, deadline=None)
    @given(experiments(max_strata=4, max_total=12))
    def test_report_invariants(self, exp):
        report = warning_accuracy(exp)
        assert report.warning_accuracy == brute_force_wa(exp).warning_accuracy
        if report.overturnable:
            wa = report.warning_accuracy
            assert len(report.sensitive_set) == report.minimal_alteration_number == exp.N * (1 - wa)
            assert sum(report.weights.as_tuple()) == 1
            assert all(0 <= w <= 1 for w in report.weights.as_tuple())

    @settings(max_examples=40, deadline=None)
    @given(experiments(max_strata=4, max_total=12), st.randoms(use_true_random=False))
    def test_invariant_under_relabelling(self, exp, rnd):
        order = list(range(exp.I))
        rnd.shuffle(order)
        treated, outcome = [], []
        for i in order:
            s = exp.strata[i]
            perm = list(range(s.n))
            rnd.shuffle(perm)
            treated.append([s.treated[j] for j in perm])
            outcome.append([s.outcome[j] for j in perm])
        other = StratifiedExperiment.from_vectors(treated, outcome)
        assert warning_accuracy(other).warning_accuracy == warning_accuracy(exp).warning_accuracy


class TestSensitiveSet:
    EXP = StratifiedExperiment.from_vectors([[1, 0, 0], [1, 0, 0, 1]], [[1, 0, 1], [0, 1, 1, 0]])

    def test_identity_witness(self):
        assert sensitive_set(self.EXP, self.EXP.outcome) == []

    def test_two_controls_in_second_stratum(self):
        witness = list(self.EXP.outcome)
        witness[4] = 0
        witness[5] = 0
        assert sensitive_set(self.EXP, witness) == [SubjectRef("s2", 1), SubjectRef("s2", 2)]

    def test_alignment(self):
        with pytest.raises(ValueError):
            sensitive_set(self.EXP, [0, 1])


class TestWeights:
    def test_example1(self):
        witness = (0,) * 1001
        assert sensitivity_weights(example1(), witness).as_tuple() == (1, 0, 0, 0)

    def test_mixed(self):
        exp = TestSensitiveSet.EXP
        witness = list(exp.outcome)
        witness[3] = 1  # treated negative becomes positive
        witness[4] = 0  # control positive becomes negative
        w = sensitivity_weights(exp, witness).as_tuple()
        assert w == (0, Fraction(1, 2), Fraction(1, 2), 0)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            sensitivity_weights(example1(), example1().outcome)

    def test_optima_weight_profiles(self):
        # Diagnostic: every optimum of Example 1 has the same weights; in
        # Example 2 study 2 the optima split into several weight profiles.
        assert len(optimal_weight_profiles(example2(1), EXACT)) == 1
        assert len(optimal_weight_profiles(example2(2), EXACT)) > 1


class TestDesignAccuracy:
    def test_never_reject_design(self):
        for seed in (0, 5):
            for p0, p1 in ((0.2, 0.2), (0.1, 0.9), (1, 0)):
                assert design_accuracy(NEVER, p0, p1, replications=15, seed=seed).estimate == 0

    def test_all_zero_draws(self):
        exp = StratifiedExperiment.from_vectors([[1, 0, 0], [1, 1, 0, 0]], [[1, 1, 1], [1, 0, 1, 0]])
        zero = exp.with_outcome([0] * exp.N)
        expected = warning_accuracy(zero).warning_accuracy
        expected = Fraction(0) if expected is NOT_OVERTURNABLE else expected
        res = design_accuracy(exp, 0, 0, replications=5, seed=1)
        assert res.values == (expected,) * 5
        assert res.exact_mean == expected and res.monte_carlo_stderr == 0

    def test_reproducible(self):
        exp = StratifiedExperiment.from_vectors([[1, 0, 1, 0, 0], [1, 1, 0, 0]], [[0] * 5, [0] * 4])
        a = design_accuracy(exp, 0.3, 0.6, replications=50, seed=42)
        b = design_accuracy(exp, 0.3, 0.6, replications=50, seed=42)
        assert a.values == b.values and a.estimate == b.estimate
        assert a.estimate == pytest.approx(float(sum(a.values) / len(a.values)))

    def test_replications_are_order_independent(self):
        exp = StratifiedExperiment.from_vectors([[1, 0, 1, 0, 0], [1, 0, 0, 1]], [[0] * 5, [0] * 4])
        full = design_accuracy(exp, 0.3, 0.6, replications=12, seed=3).values
        for r in random.Random(0).sample(range(12), 5):
            draw = exp.with_outcome(draw_outcomes(exp, 0.3, 0.6, 3, r))
            value = warning_accuracy(draw).warning_accuracy
            assert full[r] == (Fraction(0) if value is NOT_OVERTURNABLE else value)

    def test_close_to_exact(self):
        exp = StratifiedExperiment.from_vectors([[1, 1, 0, 0, 1], [1, 0, 0, 1, 0]], [[0] * 5, [0] * 5])
        exact = exact_design_accuracy(exp, Fraction(1, 5), Fraction(3, 5))
        res = design_accuracy(exp, 0.2, 0.6, replications=2000, seed=11)
        assert abs(res.estimate - float(exact)) <= 3 * res.monte_carlo_stderr

    @pytest.mark.parametrize("kwargs", [dict(p0=-0.1, p1=0.5), dict(p0=0.5, p1=1.5),
                                        dict(p0=0.5, p1=0.5, replications=0)])
    def test_parameter_ranges(self, kwargs):
        with pytest.raises(ValueError):
            design_accuracy(NEVER, **kwargs)

    def test_budget_failures(self):
        exp = StratifiedExperiment.from_vectors(
            [[0, 1], [1, 1, 1, 0], [1, 0, 1, 1]], [[0, 0], [0, 0, 1, 0], [0, 0, 1, 0]]
        )
        tiny = SolverBudget(max_nodes=1)
        with pytest.raises(BudgetExceeded):
            design_accuracy(exp, 0.1, 0.7, replications=30, seed=2, budget=tiny)
        res = design_accuracy(exp, 0.1, 0.7, replications=30, seed=2, budget=tiny,
                              exclude_budget_failures=True)
        assert res.flagged and len(res.values) == 30 - len(res.flagged)


class TestMisclassificationTable:
    def test_zero_rates(self):
        t = expected_misclassification_table(100, 100, 0.2, 0.8, 0.3, 0.7, 0, 0, 0, 0)
        assert t.as_matrix() == [[0, 0], [0, 0]]

    def test_treated_fp(self):
        t = expected_misclassification_table(100, 50, 0.2, 0.8, 0.3, 0.7, 0.1, 0, 0, 0)
        assert t.treated_fp == pytest.approx(8)

    def test_study_like_inputs(self):
        t = expected_misclassification_table(4368, 4692, 0.18, 0.82, 0.24, 0.76, 0.01, 0.05, 0.01, 0.05)
        assert t.control_fn == pytest.approx(4692 * 0.24 * 0.05)

    @pytest.mark.parametrize("args", [(100, 100, 0.2, 0.7, 0.3, 0.7, 0, 0, 0, 0),
                                      (100, 100, 0.2, 0.8, 0.3, 0.7, 1.2, 0, 0, 0),
                                      (-1, 100, 0.2, 0.8, 0.3, 0.7, 0, 0, 0, 0)])
    def test_range_errors(self, args):
        with pytest.raises(ValueError):
            expected_misclassification_table(*args)


class TestRelativeRisk:
    def test_values(self):
        assert round(float(relative_risk(803, 4368, 1147, 4692)), 2) == 0.75
        assert round(float(relative_risk(280, 4350, 236, 4667)), 2) == 1.27

    def test_errors(self):
        with pytest.raises(ValueError):
            relative_risk(1, 0, 1, 10)
