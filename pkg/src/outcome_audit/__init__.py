"""Sensitivity of randomized-experiment conclusions to outcome misclassification.

The package finds the largest accuracy of the measured binary outcomes under
which a stratified test decision could still be overturned, together with
the subjects whose misclassification would overturn it.
"""

__version__ = "0.1.0"

from .audit import (  # noqa: E402
    AnalysisReport,
    BudgetExceeded,
    DesignAccuracyResult,
    SensitivityWeights,
    SubjectRef,
    design_accuracy,
    exact_design_accuracy,
    expected_misclassification_table,
    relative_risk,
    sensitive_set,
    sensitivity_weights,
    warning_accuracy,
)
from .experiment import (  # noqa: E402
    ExperimentError,
    Stratum,
    StratifiedExperiment,
    dump_experiment,
    load_experiment,
)
from .formulation import Formulation  # noqa: E402
from .inference import (  # noqa: E402
    Decision,
    DecisionMethod,
    NullKind,
    NullSpec,
    Sidedness,
    TestDecision,
    chisq_quantile,
    decide,
    exact_randomization_pvalue,
    mh_decision,
    neyman_decision,
)
from .solver import NOT_OVERTURNABLE, SolveResult, SolveStatus, SolverBudget, brute_force_wa, solve  # noqa: E402
from .symmetry import DesignType, classify_design, diagnose  # noqa: E402

__all__ = [
    "AnalysisReport", "BudgetExceeded", "Decision", "DecisionMethod", "DesignAccuracyResult",
    "DesignType", "ExperimentError", "Formulation", "NOT_OVERTURNABLE", "NullKind", "NullSpec",
    "SensitivityWeights", "Sidedness", "SolveResult", "SolveStatus", "SolverBudget", "StratifiedExperiment",
    "Stratum", "SubjectRef", "TestDecision", "brute_force_wa", "chisq_quantile", "classify_design",
    "decide", "design_accuracy", "diagnose", "dump_experiment", "exact_design_accuracy",
    "exact_randomization_pvalue", "expected_misclassification_table", "load_experiment",
    "mh_decision", "neyman_decision", "relative_risk", "sensitive_set", "sensitivity_weights",
    "solve", "warning_accuracy",
]
