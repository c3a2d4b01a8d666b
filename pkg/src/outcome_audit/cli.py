"""Command-line front end.

Every command reads a ``stratum,treated,outcome`` CSV file and writes one
JSON report.  Exit status: 0 on success, 2 on invalid input or flags, 3 when
a solver budget was exhausted (the report is still written, flagged as a
bound).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from decimal import Decimal, ROUND_HALF_EVEN, localcontext
from fractions import Fraction
from typing import Any, Sequence

from . import __version__
from .audit import (
    AnalysisReport,
    BudgetExceeded,
    DesignAccuracyResult,
    chisq_tail,
    design_accuracy,
    sensitivity_weights,
    warning_accuracy,
)
from .experiment import ExperimentError, StratifiedExperiment, load_experiment
from .inference import DecisionMethod, NullSpec, TestDecision, decide
from .solver import NOT_OVERTURNABLE, ORACLE_CAP, SolverBudget, brute_force_wa

SCHEMA_VERSION = "1"
EXIT_OK = 0
EXIT_INVALID = 2
EXIT_BUDGET = 3
WEIGHTS_NOTE = "weights of the canonical optimal witness"


class UsageError(ValueError):
    pass


# -- serialization ------------------------------------------------------------

def rational(value: Fraction | int | None) -> dict | None:
    """Lossless rational plus a 10-place decimal rendering."""
    if value is None:
        return None
    value = Fraction(value)
    with localcontext() as ctx:
        ctx.prec = 60
        dec = (Decimal(value.numerator) / Decimal(value.denominator)).quantize(
            Decimal("1e-10"), rounding=ROUND_HALF_EVEN
        )
    return {"num": value.numerator, "den": value.denominator, "decimal": format(dec, "f")}


def _accuracy_field(value) -> Any:
    if value is NOT_OVERTURNABLE:
        return "NotOverturnable"
    return rational(value)


def _decision_json(d: TestDecision) -> dict:
    return {
        "decision": d.decision.value,
        "statistic": rational(d.statistic),
        "threshold": rational(d.threshold),
        "degenerate": d.degenerate,
        "p_value": rational(d.p_value),
    }


def _weights_json(w) -> dict | None:
    if w is None:
        return None
    return {
        "treated_fp": rational(w.treated_fp),
        "treated_fn": rational(w.treated_fn),
        "control_fp": rational(w.control_fp),
        "control_fn": rational(w.control_fn),
        "note": WEIGHTS_NOTE,
    }


def _null_json(spec: NullSpec) -> dict:
    return {
        "null": spec.null_kind.value,
        "alpha": rational(spec.alpha),
        "method": spec.decision_method.value,
        "sided": spec.sidedness.value,
    }


def analysis_json(report: AnalysisReport) -> tuple[dict, dict]:
    """Report body and its timing fields (kept apart so bodies are reproducible)."""
    body = {
        "null_spec": _null_json(report.null_spec),
        "N": report.N,
        "measured_decision": _decision_json(report.measured_decision),
        "p_value": rational(report.p_value),
        "chisq_tail": report.chisq_tail,
        "warning_accuracy": _accuracy_field(report.warning_accuracy),
        "accuracy_lower_bound": rational(report.accuracy_lower_bound),
        "budget_exceeded": report.budget_exceeded,
        "minimal_alteration_number": report.minimal_alteration_number,
        "sensitive_set": [
            {"stratum": ref.stratum_id, "row": ref.row, "subject_index": ref.subject_index}
            for ref in report.sensitive_set
        ],
        "weights": _weights_json(report.weights),
        "formulation_used": report.formulation_used.value,
        "solver": None,
        "symmetry": {
            "design_type": report.symmetry.design_type.value,
            "per_stratum_variables": report.symmetry.per_stratum_variables,
            "per_class_variables": report.symmetry.per_class_variables,
            "group_size_type": report.symmetry.group_size_type.value,
        },
    }
    timing = {}
    if report.solver is not None:
        body["solver"] = {
            "status": report.solver.status.value,
            "nodes_explored": report.solver.nodes_explored,
            "lower_bound_only": report.solver.lower_bound_only,
        }
        timing["solver_wall_time"] = report.solver.wall_time
    return body, timing


def design_json(result: DesignAccuracyResult, p0: Fraction, p1: Fraction) -> dict:
    return {
        "p0": rational(p0),
        "p1": rational(p1),
        "estimate": result.estimate,
        "exact_mean": rational(result.exact_mean),
        "replications": result.replications,
        "kept_replications": len(result.values),
        "seed": result.seed,
        "monte_carlo_stderr": result.monte_carlo_stderr,
        "flagged_replications": list(result.flagged),
        "values": [rational(v) for v in result.values],
    }


# -- argument handling --------------------------------------------------------

def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="outcome-audit",
        description="Outcome-misclassification sensitivity analysis for stratified experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "analyze": "warning accuracy, sensitive set and weights of a measured experiment",
        "design": "Monte Carlo design accuracy of a treatment assignment",
        "pvalue": "test decision and p-value of the measured outcomes",
        "oracle": "brute-force warning accuracy with every optimal witness (small N)",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--input", required=True, help="CSV file with stratum,treated,outcome columns")
        p.add_argument("--alpha", type=_fraction, default=Fraction(1, 20), help="test level (default 0.05)")
        p.add_argument("--null", choices=["sharp", "weak"], default="sharp")
        p.add_argument("--method", choices=["chisq", "exact"], default="chisq")
        p.add_argument("--sided", choices=["one", "two"], default="one")
        p.add_argument("--replications", type=int, default=None, help="design only (default 1000)")
        p.add_argument("--p0", type=_fraction, default=None, help="design only: control outcome probability")
        p.add_argument("--p1", type=_fraction, default=None, help="design only: treated outcome probability")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-nodes", type=int, default=None, help="solver node budget")
        p.add_argument("--max-time", type=float, default=None, help="solver time budget in seconds")
        p.add_argument("--output", default=None, help="report path (default: standard output)")
        if name == "design":
            p.add_argument("--exclude-budget-failures", action="store_true",
                           help="drop replications that exhaust the budget instead of failing")
    return parser


def _validate(args: argparse.Namespace) -> None:
    design = args.command == "design"
    if design and (args.p0 is None or args.p1 is None):
        raise UsageError("design needs --p0 and --p1")
    if not design:
        for flag in ("p0", "p1", "replications"):
            if getattr(args, flag) is not None:
                raise UsageError(f"--{flag} is only valid with the design command")
    if design:
        for flag in ("p0", "p1"):
            if not 0 <= getattr(args, flag) <= 1:
                raise UsageError(f"--{flag} must lie in [0, 1]")
        if args.replications is None:
            args.replications = 1000
        if args.replications < 1:
            raise UsageError("--replications must be at least 1")
    if args.seed < 0:
        raise UsageError("--seed must be non-negative")


def _budget(args: argparse.Namespace) -> SolverBudget | None:
    if args.max_nodes is None and args.max_time is None:
        return None
    defaults = SolverBudget()
    return SolverBudget(
        max_nodes=args.max_nodes if args.max_nodes is not None else defaults.max_nodes,
        max_time=args.max_time if args.max_time is not None else defaults.max_time,
    )


def _config_json(args: argparse.Namespace) -> dict:
    out = {
        "command": args.command,
        "input": args.input,
        "alpha": rational(args.alpha),
        "null": args.null,
        "method": args.method,
        "sided": args.sided,
        "seed": args.seed,
        "max_nodes": args.max_nodes,
        "max_time": args.max_time,
    }
    if args.command == "design":
        out.update(replications=args.replications, p0=rational(args.p0), p1=rational(args.p1))
    return out


# -- commands -----------------------------------------------------------------

def _run_analyze(exp: StratifiedExperiment, spec: NullSpec, args) -> tuple[dict, dict, int]:
    report = warning_accuracy(exp, spec, _budget(args))
    body, timing = analysis_json(report)
    return body, timing, EXIT_BUDGET if report.budget_exceeded else EXIT_OK


def _run_design(exp: StratifiedExperiment, spec: NullSpec, args) -> tuple[dict, dict, int]:
    result = design_accuracy(
        exp, args.p0, args.p1, spec,
        replications=args.replications,
        seed=args.seed,
        budget=_budget(args),
        exclude_budget_failures=args.exclude_budget_failures,
    )
    return design_json(result, args.p0, args.p1), {}, EXIT_OK


def _run_pvalue(exp: StratifiedExperiment, spec: NullSpec, args) -> tuple[dict, dict, int]:
    d = decide(exp, exp.outcome, spec)
    body = {"null_spec": _null_json(spec), "N": exp.N, **_decision_json(d)}
    if spec.decision_method is DecisionMethod.CHI_SQUARE:
        body["chisq_tail"] = chisq_tail(d)
    return body, {}, EXIT_OK


def _run_oracle(exp: StratifiedExperiment, spec: NullSpec, args) -> tuple[dict, dict, int]:
    if exp.N > ORACLE_CAP:
        raise UsageError(f"oracle needs N <= {ORACLE_CAP}, got N = {exp.N}")
    res = brute_force_wa(exp, spec, all_optima=True)
    body = {
        "null_spec": _null_json(spec),
        "N": exp.N,
        "measured_decision": decide(exp, exp.outcome, spec).decision.value,
        "warning_accuracy": _accuracy_field(res.warning_accuracy),
        "witness": list(res.witness) if res.witness is not None else None,
        "optima": [list(w) for w in res.optima],
        "weights_per_optimum": [_weights_json(sensitivity_weights(exp, w)) for w in res.optima],
    }
    profiles = {tuple(sensitivity_weights(exp, w).as_tuple()) for w in res.optima}
    body["optima_share_weights"] = len(profiles) <= 1
    return body, {}, EXIT_OK


COMMANDS = {
    "analyze": _run_analyze,
    "design": _run_design,
    "pvalue": _run_pvalue,
    "oracle": _run_oracle,
}


def run(args: argparse.Namespace) -> int:
    _validate(args)
    with open(args.input, newline="") as fh:
        exp = load_experiment(fh, require_outcome=args.command != "design")
    spec = NullSpec(args.null, args.alpha, args.method, args.sided)
    start = time.perf_counter()
    body, timing, status = COMMANDS[args.command](exp, spec, args)
    timing["wall_time"] = time.perf_counter() - start
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "config": _config_json(args),
        "result": body,
        "timing": timing,
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if status == EXIT_BUDGET:
        print("error: solver budget exhausted; the reported accuracy is a lower bound", file=sys.stderr)
    return status


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (UsageError, ExperimentError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
