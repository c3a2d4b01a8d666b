"""Warning accuracy, sensitive sets, sensitivity weights and design accuracy."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .experiment import StratifiedExperiment, accuracy, alteration_count
from .formulation import BUILDERS, FlipDirection, Formulation, decode_outcome
from .inference import (
    Decision,
    DecisionMethod,
    NullKind,
    NullSpec,
    TestDecision,
    decide,
)
from .solver import (
    NOT_OVERTURNABLE,
    SolveStatus,
    SolverBudget,
    brute_force_wa,
    count_space_wa,
    solve,
)
from .symmetry import DesignType, SymmetryDiagnosis, diagnose


class BudgetExceeded(RuntimeError):
    """A solve stopped on its node or time budget before proving optimality."""


@dataclass(frozen=True)
class SubjectRef:
    stratum_id: str
    subject_index: int  # 0-based within the stratum
    row: int | None = None  # 1-based data row of the input file, when known


@dataclass(frozen=True)
class SensitivityWeights:
    """Shares of the sensitive set in each misclassification cell."""

    treated_fp: Fraction
    treated_fn: Fraction
    control_fp: Fraction
    control_fn: Fraction

    def as_tuple(self) -> tuple[Fraction, Fraction, Fraction, Fraction]:
        return (self.treated_fp, self.treated_fn, self.control_fp, self.control_fn)


@dataclass(frozen=True)
class SolverSummary:
    status: SolveStatus
    nodes_explored: int
    wall_time: float
    lower_bound_only: bool


@dataclass(frozen=True)
class AnalysisReport:
    """Everything the analysis stage reports for one experiment.

    ``warning_accuracy`` is a rational, ``NOT_OVERTURNABLE``, or ``None``
    when the solver ran out of budget; in that case
    ``accuracy_lower_bound`` holds the best accuracy found so far, which is
    only a lower bound.  The sensitive set and weights belong to the
    canonical optimal witness; other optima may differ.
    """

    null_spec: NullSpec
    measured_decision: TestDecision
    p_value: Fraction | None
    chisq_tail: float | None
    warning_accuracy: object
    accuracy_lower_bound: Fraction | None
    minimal_alteration_number: int | None
    sensitive_set: tuple[SubjectRef, ...]
    weights: SensitivityWeights | None
    witness: tuple[int, ...] | None
    formulation_used: Formulation
    solver: SolverSummary | None
    symmetry: SymmetryDiagnosis
    N: int

    @property
    def budget_exceeded(self) -> bool:
        return self.solver is not None and self.solver.lower_bound_only

    @property
    def overturnable(self) -> bool:
        return self.witness is not None and not self.budget_exceeded


def sensitive_set(exp: StratifiedExperiment, witness: Sequence[int]) -> list[SubjectRef]:
    """Subjects whose outcome differs between ``witness`` and the measured vector."""
    pieces = exp.split(witness)
    out = []
    for s, piece in zip(exp.strata, pieces):
        rows = s.rows or (None,) * s.n
        for j, (ystar, y, row) in enumerate(zip(s.outcome, piece, rows)):
            if ystar != y:
                out.append(SubjectRef(s.label, j, row))
    return out


def sensitivity_weights(exp: StratifiedExperiment, witness: Sequence[int]) -> SensitivityWeights:
    """Split of the altered subjects by arm and misclassification direction.

    A false positive is a measured positive whose true outcome is negative.
    """
    counts = {"tfp": 0, "tfn": 0, "cfp": 0, "cfn": 0}
    for z, ystar, y in zip(exp.treated, exp.outcome, _aligned(exp, witness)):
        if ystar == y:
            continue
        arm = "t" if z else "c"
        kind = "fp" if ystar == 1 else "fn"
        counts[arm + kind] += 1
    total = sum(counts.values())
    if total == 0:
        raise ValueError("witness equals the measured outcomes: the sensitive set is empty")
    return SensitivityWeights(
        Fraction(counts["tfp"], total),
        Fraction(counts["tfn"], total),
        Fraction(counts["cfp"], total),
        Fraction(counts["cfn"], total),
    )


def _aligned(exp: StratifiedExperiment, y: Sequence[int]) -> Sequence[int]:
    if len(y) != exp.N:
        raise ValueError(f"witness has length {len(y)}, expected {exp.N}")
    return y


def choose_formulation(spec: NullSpec, diagnosis: SymmetryDiagnosis) -> Formulation:
    per_stratum = diagnosis.design_type is DesignType.TYPE_I
    if spec.null_kind is NullKind.SHARP:
        return Formulation.P1 if per_stratum else Formulation.P2
    return Formulation.P3 if per_stratum else Formulation.P4


def chisq_tail(decision: TestDecision) -> float | None:
    """Upper chi-square(1) tail probability of a chi-square decision's statistic."""
    if decision.degenerate or decision.p_value is not None:
        return None
    return math.erfc(math.sqrt(float(decision.statistic) / 2))


def warning_accuracy(
    exp: StratifiedExperiment,
    null_spec: NullSpec | None = None,
    budget: SolverBudget | None = None,
    formulation: Formulation | str | None = None,
    count_cap: int = 10**6,
) -> AnalysisReport:
    """Largest accuracy of the measured outcomes under which the decision flips.

    The chi-square decision is solved exactly through the integer programs
    (per-stratum or per-class, whichever has fewer variables, unless
    ``formulation`` forces one).  The exact-enumeration decision has no
    program and is solved by searching per-stratum count vectors in order of
    increasing alteration number, evaluating at most ``count_cap`` of them.
    """
    spec = null_spec or NullSpec()
    measured = decide(exp, exp.outcome, spec)
    diagnosis = diagnose(exp)
    summary = None
    lower = None
    if spec.decision_method is DecisionMethod.EXACT or formulation == Formulation.BRUTE_FORCE:
        used = Formulation.BRUTE_FORCE
        oracle = count_space_wa(exp, spec, cap=count_cap)
        witness = oracle.witness
        value = oracle.warning_accuracy
    else:
        used = Formulation(formulation) if formulation else choose_formulation(spec, diagnosis)
        weak_form = used in (Formulation.P3, Formulation.P4)
        if weak_form != (spec.null_kind is NullKind.WEAK):
            raise ValueError(f"formulation {used.value} does not match the {spec.null_kind.value} null")
        problem = BUILDERS[used](exp, spec.alpha, direction=FlipDirection(measured.decision))
        result = solve(problem, budget)
        summary = SolverSummary(result.status, result.nodes_explored, result.wall_time, result.lower_bound_only)
        witness = None
        value = NOT_OVERTURNABLE
        if result.assignment is not None:
            witness = decode_outcome(exp, problem, result.assignment)
        if result.status is SolveStatus.BUDGET_EXCEEDED:
            value = None
            lower = result.objective
        elif result.status is SolveStatus.OPTIMAL:
            value = result.objective
    if witness is not None:
        flipped = decide(exp, witness, spec).decision
        if flipped is measured.decision:
            raise AssertionError("witness does not change the decision")
        if value is not None and accuracy(exp.outcome, witness) != value:
            raise AssertionError("witness accuracy differs from the optimum")
    man = None if value is None or witness is None else alteration_count(exp.outcome, witness)
    sset = tuple(sensitive_set(exp, witness)) if witness is not None and value is not None else ()
    weights = sensitivity_weights(exp, witness) if sset else None
    return AnalysisReport(
        null_spec=spec,
        measured_decision=measured,
        p_value=measured.p_value,
        chisq_tail=chisq_tail(measured),
        warning_accuracy=value,
        accuracy_lower_bound=lower,
        minimal_alteration_number=man,
        sensitive_set=sset,
        weights=weights,
        witness=witness,
        formulation_used=used,
        solver=summary,
        symmetry=diagnosis,
        N=exp.N,
    )


def optimal_weight_profiles(exp: StratifiedExperiment, null_spec: NullSpec | None = None) -> set[tuple]:
    """Distinct sensitivity-weight tuples over every brute-force optimum."""
    oracle = brute_force_wa(exp, null_spec, all_optima=True)
    return {sensitivity_weights(exp, w).as_tuple() for w in oracle.optima}


# -- design accuracy ----------------------------------------------------------

@dataclass(frozen=True)
class DesignAccuracyResult:
    """Monte Carlo design accuracy.

    ``values`` holds the inner optimum of every kept replication in
    replication order (0 for draws whose decision cannot be flipped).
    """

    estimate: float
    exact_mean: Fraction
    replications: int
    values: tuple[Fraction, ...]
    seed: int
    monte_carlo_stderr: float
    flagged: tuple[int, ...] = ()


def _probability(p, name: str) -> Fraction:
    value = Fraction(p) if not isinstance(p, float) else Fraction(str(p))
    if not 0 <= value <= 1:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")
    return value


def draw_outcomes(design: StratifiedExperiment, p0, p1, seed: int, replication: int) -> tuple[int, ...]:
    """One Bernoulli outcome draw; depends only on (seed, replication)."""
    probs = np.where(np.array(design.treated) == 1, float(p1), float(p0))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, replication])))
    return tuple(int(v) for v in (rng.random(design.N) < probs))


def _inner_value(design, y, spec, budget, memo) -> Fraction | None:
    exp = design.with_outcome(y)
    key = tuple(s.table().as_tuple() for s in exp.strata)
    if key in memo:
        return memo[key]
    report = warning_accuracy(exp, spec, budget)
    if report.budget_exceeded:
        value = None
    elif report.warning_accuracy is NOT_OVERTURNABLE:
        value = Fraction(0)
    else:
        value = report.warning_accuracy
    memo[key] = value
    return value


def design_accuracy(
    design: StratifiedExperiment,
    p0,
    p1,
    null_spec: NullSpec | None = None,
    replications: int = 1000,
    seed: int = 0,
    budget: SolverBudget | None = None,
    exclude_budget_failures: bool = False,
) -> DesignAccuracyResult:
    """Expected warning accuracy when true outcomes are Bernoulli(p0 / p1).

    Each replication draws true outcomes (``p1`` for treated subjects, ``p0``
    for controls) from PCG64 seeded with ``(seed, replication)``, then finds
    the most accurate measured vector whose decision differs.  Accuracy is
    symmetric, so this is the warning-accuracy program with the draw in the
    role of the measured outcomes.  The measured outcomes of ``design`` are
    ignored.
    """
    spec = null_spec or NullSpec()
    p0 = _probability(p0, "p0")
    p1 = _probability(p1, "p1")
    if replications < 1:
        raise ValueError("replications must be at least 1")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    memo: dict = {}
    values = []
    flagged = []
    for rep in range(replications):
        y = draw_outcomes(design, p0, p1, seed, rep)
        value = _inner_value(design, y, spec, budget, memo)
        if value is None:
            flagged.append(rep)
            if not exclude_budget_failures:
                raise BudgetExceeded(f"replication {rep} exceeded the solver budget")
            continue
        values.append(value)
    if not values:
        raise BudgetExceeded("every replication exceeded the solver budget")
    mean = sum(values, Fraction(0)) / len(values)
    arr = np.array([float(v) for v in values])
    stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return DesignAccuracyResult(float(mean), mean, replications, tuple(values), seed, stderr, tuple(flagged))


def exact_design_accuracy(design: StratifiedExperiment, p0, p1, null_spec: NullSpec | None = None,
                          max_subjects: int = 16) -> Fraction:
    """Design accuracy computed by summing over all 2**N outcome draws."""
    spec = null_spec or NullSpec()
    p0 = _probability(p0, "p0")
    p1 = _probability(p1, "p1")
    if design.N > max_subjects:
        raise ValueError(f"exact design accuracy needs N <= {max_subjects}")
    probs = [p1 if z else p0 for z in design.treated]
    memo: dict = {}
    total = Fraction(0)
    for y in itertools.product((0, 1), repeat=design.N):
        weight = Fraction(1)
        for p, v in zip(probs, y):
            weight *= p if v else 1 - p
        if weight == 0:
            continue
        total += weight * _inner_value(design, y, spec, None, memo)
    return total


# -- reporting helpers --------------------------------------------------------

@dataclass(frozen=True)
class MisclassificationTable:
    """Expected misclassified counts by arm (rows) and direction (columns)."""

    treated_fp: float
    treated_fn: float
    control_fp: float
    control_fn: float

    def as_matrix(self) -> list[list[float]]:
        return [[self.treated_fp, self.treated_fn], [self.control_fp, self.control_fn]]


def expected_misclassification_table(
    n_t: float, n_c: float,
    p_t1: float, p_t0: float, p_c1: float, p_c0: float,
    pi_t_fp: float, pi_t_fn: float, pi_c_fp: float, pi_c_fn: float,
) -> MisclassificationTable:
    """Expected false positives and negatives per arm.

    ``p_*1`` / ``p_*0`` are the true positive / negative proportions of an
    arm; ``pi_*_fp`` is the rate at which true negatives are measured
    positive and ``pi_*_fn`` the rate at which true positives are measured
    negative.
    """
    if n_t < 0 or n_c < 0:
        raise ValueError("arm sizes must be non-negative")
    rates = dict(p_t1=p_t1, p_t0=p_t0, p_c1=p_c1, p_c0=p_c0,
                 pi_t_fp=pi_t_fp, pi_t_fn=pi_t_fn, pi_c_fp=pi_c_fp, pi_c_fn=pi_c_fn)
    for name, v in rates.items():
        if not 0 <= v <= 1:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    for a, b in (("p_t1", "p_t0"), ("p_c1", "p_c0")):
        if abs(rates[a] + rates[b] - 1) > 1e-9:
            raise ValueError(f"{a} + {b} must equal 1")
    return MisclassificationTable(
        n_t * p_t0 * pi_t_fp,
        n_t * p_t1 * pi_t_fn,
        n_c * p_c0 * pi_c_fp,
        n_c * p_c1 * pi_c_fn,
    )


def relative_risk(events_t: int, n_t: int, events_c: int, n_c: int) -> Fraction:
    """Risk in the treated arm divided by risk in the control arm."""
    if min(n_t, n_c) <= 0 or events_c <= 0:
        raise ValueError("relative risk needs positive arm sizes and control events")
    return Fraction(events_t, n_t) / Fraction(events_c, n_c)


def decision_flipped(report: AnalysisReport) -> Decision | None:
    """Decision reached by the witness, if there is one."""
    if report.witness is None:
        return None
    return report.measured_decision.decision.flipped()
