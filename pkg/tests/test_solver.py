from fractions import Fraction

import numpy as np
import pytest

from outcome_audit.experiment import StratifiedExperiment, example1, example2
from outcome_audit.formulation import (
    BUILDERS,
    Equality,
    Formulation,
    IqclpProblem,
    QuadBlock,
    QuadForm,
    build_p1,
    build_p2,
    is_feasible,
    objective_value,
)
from outcome_audit.inference import NullKind, NullSpec
from outcome_audit.solver import (
    NOT_OVERTURNABLE,
    SolveStatus,
    SolverBudget,
    brute_force_wa,
    count_space_wa,
    solve,
)
from outcome_audit.synthetic import random_experiment

from conftest import frozen_cases

FROZEN = frozen_cases()
SLOW = StratifiedExperiment.from_vectors(
    [[0, 1], [1, 1, 1, 0], [1, 0, 1, 1]], [[0, 0], [0, 0, 1, 0], [0, 0, 1, 0]]
)


def solver_wa(exp, spec, form, **kw):
    result = solve(BUILDERS[form](exp, spec.alpha), **kw)
    if result.status is SolveStatus.INFEASIBLE:
        return NOT_OVERTURNABLE
    assert result.status is SolveStatus.OPTIMAL
    return result.objective


def expected(case):
    wa = case["warning_accuracy"]
    return NOT_OVERTURNABLE if wa == "NotOverturnable" else Fraction(wa)


class TestFrozenOracle:
    @pytest.mark.parametrize("exp, spec, case", FROZEN)
    def test_brute_force_unchanged(self, exp, spec, case):
        res = brute_force_wa(exp, spec)
        assert res.warning_accuracy == expected(case)
        assert (list(res.witness) if res.witness else None) == case["witness"]

    @pytest.mark.parametrize("exp, spec, case", FROZEN)
    def test_count_space_matches(self, exp, spec, case):
        res = count_space_wa(exp, spec)
        assert res.warning_accuracy == expected(case)
        assert (list(res.witness) if res.witness else None) == case["witness"]

    @pytest.mark.parametrize("exp, spec, case", [c for c in FROZEN if c[2]["method"] == "chisq"])
    def test_programs_match(self, exp, spec, case):
        forms = (Formulation.P1, Formulation.P2) if spec.null_kind is NullKind.SHARP else (Formulation.P3, Formulation.P4)
        for form in forms:
            assert solver_wa(exp, spec, form) == expected(case)


class TestSolve:
    def test_example1(self):
        result = solve(build_p1(example1(), Fraction(1, 20)))
        assert result.optimal and result.objective == Fraction(1000, 1001)
        assert result.nodes_explored >= 1

    def test_infeasible(self):
        exp = StratifiedExperiment.from_vectors([[1, 1, 0, 0]], [[0, 1, 0, 1]])
        result = solve(build_p1(exp, Fraction(1, 20)))
        assert result.status is SolveStatus.INFEASIBLE
        assert result.objective is None and result.assignment is None

    def test_solution_is_verified(self):
        problem = build_p2(SLOW, Fraction(1, 20))
        result = solve(problem)
        assert is_feasible(problem, result.assignment)
        assert objective_value(problem, result.assignment) == result.objective

    def test_node_budget(self):
        full = solve(build_p1(SLOW, Fraction(1, 20)))
        assert full.nodes_explored > 2
        cut = solve(build_p1(SLOW, Fraction(1, 20)), SolverBudget(max_nodes=2))
        assert cut.status is SolveStatus.BUDGET_EXCEEDED
        assert cut.lower_bound_only
        if cut.objective is not None:
            assert cut.objective <= full.objective

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            SolverBudget(max_nodes=0)

    def test_copies_and_joint_paths_agree(self):
        rng = np.random.default_rng(99)
        for _ in range(40):
            exp = random_experiment(rng, max_strata=4, max_total=14)
            a = solve(build_p2(exp, Fraction(1, 10)), copies_threshold=0)
            b = solve(build_p2(exp, Fraction(1, 10)), copies_threshold=10**9)
            assert (a.status, a.objective) == (b.status, b.objective)

    def test_deterministic(self):
        problem = build_p1(SLOW, Fraction(1, 20))
        first, second = solve(problem), solve(problem)
        assert (first.assignment, first.nodes_explored) == (second.assignment, second.nodes_explored)

    def test_log_callback(self):
        lines = []
        solve(build_p1(SLOW, Fraction(1, 20)), log=lines.append)
        assert lines

    @staticmethod
    def _generic(blocks):
        # maximize x0 + x1 with (x0 + x1)^2 - 5 x2 <= 0, x in [0, 3]^3 and x0 + x1 + x2 = 3
        quad = QuadForm((Fraction(1), Fraction(1), Fraction(0)), blocks)
        return IqclpProblem(
            lower=(0, 0, 0), upper=(3, 3, 3),
            objective=(Fraction(1), Fraction(1), Fraction(0)), objective_constant=Fraction(0),
            quad=quad, quad_linear=(Fraction(0), Fraction(0), Fraction(-5)), sense="LeqZero",
            equalities=(Equality((0, 1, 2), 3),), degenerate_accept=False,
        )

    def test_generic_problem(self):
        result = solve(self._generic((QuadBlock((0, 1, 2)),)))
        assert result.optimal and result.objective == 2

    def test_equality_across_blocks_unsupported(self):
        with pytest.raises(ValueError, match="equalities spanning"):
            solve(self._generic((QuadBlock((0, 1)), QuadBlock((2,)))))


class TestOracles:
    def test_example2(self):
        spec = NullSpec(decision_method="exact")
        assert brute_force_wa(example2(1), spec).warning_accuracy == Fraction(16, 17)
        assert brute_force_wa(example2(2), spec).warning_accuracy == Fraction(15, 17)

    def test_cap(self):
        with pytest.raises(ValueError, match="N <= 20"):
            brute_force_wa(example1())

    def test_count_space_handles_large_n(self):
        res = count_space_wa(example1(), NullSpec(decision_method="exact"))
        assert res.warning_accuracy == Fraction(1000, 1001)
        assert res.witness == (0,) + (0,) * 1000

    def test_all_optima_are_optimal(self):
        res = brute_force_wa(example2(2), NullSpec(decision_method="exact"), all_optima=True)
        assert res.witness == res.optima[0]
        assert len(set(res.optima)) == len(res.optima) > 1

    def test_not_overturnable_is_falsy(self):
        assert not NOT_OVERTURNABLE
        assert str(NOT_OVERTURNABLE) == "NotOverturnable"
