"""Larger instances: each must solve to proven optimality well within budget."""


import numpy as np
import pytest

from outcome_audit.audit import warning_accuracy
from outcome_audit.experiment import StratifiedExperiment
from outcome_audit.formulation import Formulation
from outcome_audit.inference import Decision, NullSpec
from outcome_audit.solver import SolveStatus, SolverBudget
from outcome_audit.synthetic import large_trial_experiment

BUDGET = SolverBudget(max_time=300)


def check(report, decision=None):
    assert report.solver.status is SolveStatus.OPTIMAL
    if decision is not None:
        assert report.measured_decision.decision is decision
    assert len(report.sensitive_set) == report.minimal_alteration_number


class TestLargeTrials:
    def test_accept_case(self):
        exp = large_trial_experiment(11, treated_rate=0.2, control_rate=0.21)
        check(warning_accuracy(exp, budget=BUDGET), Decision.ACCEPT)

    def test_weak_null(self):
        report = warning_accuracy(large_trial_experiment(5), NullSpec("weak"), budget=BUDGET)
        assert report.formulation_used is Formulation.P3
        check(report)

    @pytest.mark.parametrize("pairs, rates", [(100, (0.3, 0.5)), (500, (0.2, 0.6))])
    def test_paired_designs_use_classes(self, pairs, rates):
        rng = np.random.default_rng(pairs)
        outcome = [list((rng.random(2) < rates).astype(int)) for _ in range(pairs)]
        exp = StratifiedExperiment.from_vectors([[1, 0]] * pairs, outcome)
        report = warning_accuracy(exp, budget=BUDGET)
        assert report.formulation_used is Formulation.P2
        check(report)
        assert report.warning_accuracy == warning_accuracy(exp, formulation="P1", budget=BUDGET).warning_accuracy


class TestSynthetic:
    def test_large_trial_shape(self):
        exp = large_trial_experiment()
        assert exp.I == 221
        assert 8500 < exp.N < 9500
        assert all(36 <= s.n <= 46 and abs(2 * s.m - s.n) <= 1 for s in exp.strata)
        assert 0.15 < sum(exp.outcome) / exp.N < 0.25
