"""Integer programs whose optimum is the warning accuracy.

Every program maximizes ``q.x + c`` over integer ``x`` in a box, subject to
optional equalities and one quadratic constraint ``g(x) = x'Q1x + q1.x``
with ``g <= 0`` (measured decision Reject, so a flip must Accept) or
``g > 0`` (measured decision Accept, so a flip must Reject).  Points where
the variance part of ``g`` (everything except the rank-one square) vanishes
have a degenerate test and always count as Accept; see :func:`is_feasible`.

``Q1`` always has the shape ``u u' + blockdiag(R_b)``: a rank-one part
carrying the centred test statistic plus block-diagonal residuals carrying
the variance term.  :class:`QuadForm` stores exactly that, which keeps the
large multi-site programs small and lets the solver read the structure off
directly.  Dense views are available for testing.

Per-stratum programs (``P1`` sharp, ``P3`` weak) use the four counts
``U00, U01, U10, U11`` of each stratum: true positives among
(control, measured negative), (control, measured positive),
(treated, measured negative), (treated, measured positive).
Per-class programs (``P2`` sharp, ``P4`` weak) use ``d[s, p]``, the number
of strata of class ``s`` whose 2x2x2 table is the ``p``-th Delta table.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, TextIO

from .experiment import StratifiedExperiment
from .inference import Decision, chisq_quantile, mh_decision, neyman_decision, _check_arm_sizes
from .symmetry import (
    DeltaTable,
    UniqueTableIndex,
    build_index,
    delta_index,
    enumerate_delta_tables,
)

COMPONENTS = ("00", "01", "10", "11")


class QuadSense(str, enum.Enum):
    LEQ_ZERO = "LeqZero"
    GT_ZERO = "GtZero"


class Formulation(str, enum.Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    P4 = "P4"
    BRUTE_FORCE = "BruteForce"


@dataclass(frozen=True)
class FlipDirection:
    """Which way the decision has to move.

    A measured Reject must be turned into Accept (``g <= 0``); a measured
    Accept must be turned into Reject (``g > 0``, strict so that the
    threshold itself stays on the Accept side).
    """

    original_decision: Decision

    @property
    def sense(self) -> QuadSense:
        if Decision(self.original_decision) is Decision.REJECT:
            return QuadSense.LEQ_ZERO
        return QuadSense.GT_ZERO


@dataclass(frozen=True)
class VarMeta:
    """``kind`` is "upsilon" (unit = stratum) or "delta" (unit = class)."""

    kind: str
    unit: int
    component: str | int
    delta: DeltaTable | None = None

    def label(self) -> str:
        if self.kind == "upsilon":
            return f"U{self.component}[{self.unit}]"
        return f"d[{self.unit},{self.component}]"


@dataclass(frozen=True)
class QuadBlock:
    """Residual block: ``entries`` maps local (i, j), i <= j, to a nonzero value."""

    variables: tuple[int, ...]
    entries: tuple[tuple[int, int, Fraction], ...] = ()

    def local_matrix(self) -> list[list[Fraction]]:
        k = len(self.variables)
        mat = [[Fraction(0)] * k for _ in range(k)]
        for i, j, v in self.entries:
            mat[i][j] = v
            mat[j][i] = v
        return mat


@dataclass(frozen=True)
class QuadForm:
    """``Q = u u' + blockdiag(R_b)`` over ``num_vars`` variables."""

    rank_one: tuple[Fraction, ...]
    blocks: tuple[QuadBlock, ...]
    _where: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        where = {}
        for b, blk in enumerate(self.blocks):
            for local, var in enumerate(blk.variables):
                if var in where:
                    raise ValueError(f"variable {var} appears in two residual blocks")
                if not 0 <= var < len(self.rank_one):
                    raise ValueError(f"residual block refers to unknown variable {var}")
                where[var] = (b, local)
            for i, j, _ in blk.entries:
                if not 0 <= i <= j < len(blk.variables):
                    raise ValueError("residual entries must be upper-triangular local indices")
        object.__setattr__(self, "_where", where)

    @property
    def num_vars(self) -> int:
        return len(self.rank_one)

    def entry(self, i: int, j: int) -> Fraction:
        value = self.rank_one[i] * self.rank_one[j]
        bi, bj = self._where.get(i), self._where.get(j)
        if bi is not None and bj is not None and bi[0] == bj[0]:
            a, b = sorted((bi[1], bj[1]))
            for r, c, v in self.blocks[bi[0]].entries:
                if r == a and c == b:
                    value += v
                    break
        return value

    def dense(self) -> list[list[Fraction]]:
        n = self.num_vars
        u = self.rank_one
        mat = [[u[i] * u[j] for j in range(n)] for i in range(n)]
        for blk in self.blocks:
            for i, j, v in blk.entries:
                a, b = blk.variables[i], blk.variables[j]
                mat[a][b] += v
                if a != b:
                    mat[b][a] += v
        return mat

    def value(self, x: Sequence[int]) -> Fraction:
        s = sum((ui * xi for ui, xi in zip(self.rank_one, x) if xi), Fraction(0))
        total = s * s
        for blk in self.blocks:
            for i, j, v in blk.entries:
                xi, xj = x[blk.variables[i]], x[blk.variables[j]]
                total += v * xi * xj * (1 if i == j else 2)
        return total


@dataclass(frozen=True)
class Equality:
    """``sum(x[v] for v in variables) == rhs``."""

    variables: tuple[int, ...]
    rhs: int


@dataclass(frozen=True)
class IqclpProblem:
    lower: tuple[int, ...]
    upper: tuple[int, ...]
    objective: tuple[Fraction, ...]
    objective_constant: Fraction
    quad: QuadForm
    quad_linear: tuple[Fraction, ...]
    sense: QuadSense
    equalities: tuple[Equality, ...] = ()
    var_meta: tuple[VarMeta, ...] = ()
    formulation: Formulation | None = None
    chi2: Fraction | None = None
    degenerate_accept: bool = True

    def __post_init__(self):
        n = len(self.lower)
        for name in ("upper", "objective", "quad_linear"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.quad.num_vars != n:
            raise ValueError("quadratic form size does not match the variable count")
        if self.var_meta and len(self.var_meta) != n:
            raise ValueError("var_meta length does not match the variable count")
        for i, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if lo > hi:
                raise ValueError(f"variable {i}: lower bound {lo} exceeds upper bound {hi}")
        for eq in self.equalities:
            if len(set(eq.variables)) != len(eq.variables):
                raise ValueError("equality lists a variable twice")
            if any(not 0 <= v < n for v in eq.variables):
                raise ValueError("equality refers to an unknown variable")
        object.__setattr__(self, "sense", QuadSense(self.sense))

    @property
    def num_vars(self) -> int:
        return len(self.lower)

    @property
    def quad_matrix(self) -> list[list[Fraction]]:
        return self.quad.dense()

    def check_point(self, x: Sequence[int]) -> None:
        if len(x) != self.num_vars:
            raise ValueError(f"point has length {len(x)}, expected {self.num_vars}")
        for i, (lo, v, hi) in enumerate(zip(self.lower, x, self.upper)):
            if not lo <= v <= hi:
                raise ValueError(f"variable {i} = {v} violates bounds [{lo}, {hi}]")
        for eq in self.equalities:
            total = sum(x[v] for v in eq.variables)
            if total != eq.rhs:
                raise ValueError(f"equality violated: sum is {total}, expected {eq.rhs}")


def constraint_value(problem: IqclpProblem, x: Sequence[int]) -> Fraction:
    """Exact ``x'Q1x + q1.x`` at a point inside the box and equalities."""
    problem.check_point(x)
    lin = sum((q * v for q, v in zip(problem.quad_linear, x) if v), Fraction(0))
    return problem.quad.value(x) + lin


def variance_part(problem: IqclpProblem, x: Sequence[int]) -> Fraction:
    """``g(x)`` minus the rank-one square; ``-chi2`` times the null variance."""
    s = sum((u * v for u, v in zip(problem.quad.rank_one, x) if v), Fraction(0))
    return constraint_value(problem, x) - s * s


def objective_value(problem: IqclpProblem, x: Sequence[int]) -> Fraction:
    problem.check_point(x)
    return problem.objective_constant + sum(
        (q * v for q, v in zip(problem.objective, x) if v), Fraction(0)
    )


def is_feasible(problem: IqclpProblem, x: Sequence[int]) -> bool:
    """Whether ``x`` flips the decision.

    With ``degenerate_accept`` a zero variance part means the test accepts
    whatever the sign of ``g``.  Under the sharp null this never changes the
    answer (zero variance forces a zero centred statistic); under the weak
    null the estimator can be nonzero while its plug-in variance is zero.
    """
    g = constraint_value(problem, x)
    degenerate = problem.degenerate_accept and variance_part(problem, x) == 0
    if problem.sense is QuadSense.LEQ_ZERO:
        return g <= 0 or degenerate
    return g > 0 and not degenerate


# -- builders -----------------------------------------------------------------

def _negatives_share(exp: StratifiedExperiment) -> Fraction:
    return Fraction(sum(1 - y for y in exp.outcome), exp.N)


def _direction(direction, exp, alpha, weak: bool) -> FlipDirection:
    if direction is None:
        dec = (neyman_decision if weak else mh_decision)(exp, exp.outcome, alpha)
        return FlipDirection(dec.decision)
    if isinstance(direction, FlipDirection):
        return direction
    return FlipDirection(Decision(direction))


def _per_stratum(exp, alpha, direction, weak: bool, formulation: Formulation) -> IqclpProblem:
    alpha = Fraction(alpha)
    chi2 = chisq_quantile(alpha)
    N = exp.N
    lower, upper, obj, u, q1, meta, blocks = [], [], [], [], [], [], []
    sign = (Fraction(-1, N), Fraction(1, N), Fraction(-1, N), Fraction(1, N))
    for i, s in enumerate(exp.strata):
        tab = s.table().as_tuple()
        n, m = s.n, s.m
        k = n - m
        base = len(lower)
        lower.extend([0] * 4)
        upper.extend(tab)
        obj.extend(sign)
        meta.extend(VarMeta("upsilon", i, c) for c in COMPONENTS)
        if not weak:
            # (T - E) = sum over strata of (A - (m/n)(A + C))
            r = Fraction(m, n)
            u.extend((-r, -r, 1 - r, 1 - r))
            kappa = chi2 * Fraction(m * k, n * n * (n - 1))
            # -chi2 * Var contributes kappa*(A+C)^2 - kappa*n*(A+C)
            entries = tuple((a, b, kappa) for a in range(4) for b in range(a, 4))
            q1.extend([-kappa * n] * 4)
        else:
            ut = Fraction(n, N * m)
            uc = Fraction(n, N * k)
            u.extend((-uc, -uc, ut, ut))
            w = Fraction(n * n, N * N)
            ct = chi2 * w / (m * m * (m - 1))
            cc = chi2 * w / (k * k * (k - 1))
            entries = ((0, 0, cc), (0, 1, cc), (1, 1, cc), (2, 2, ct), (2, 3, ct), (3, 3, ct))
            lc = -chi2 * w / (k * (k - 1))
            lt = -chi2 * w / (m * (m - 1))
            q1.extend((lc, lc, lt, lt))
        blocks.append(QuadBlock(tuple(range(base, base + 4)), entries))
    return IqclpProblem(
        lower=tuple(lower),
        upper=tuple(upper),
        objective=tuple(obj),
        objective_constant=_negatives_share(exp),
        quad=QuadForm(tuple(u), tuple(blocks)),
        quad_linear=tuple(q1),
        sense=_direction(direction, exp, alpha, weak).sense,
        var_meta=tuple(meta),
        formulation=formulation,
        chi2=chi2,
    )


def _per_class(exp, alpha, index, direction, weak: bool, formulation: Formulation) -> IqclpProblem:
    alpha = Fraction(alpha)
    chi2 = chisq_quantile(alpha)
    if index is None:
        index = build_index(exp)
    N = exp.N
    lower, upper, obj, u, q1, meta, blocks, eqs = [], [], [], [], [], [], [], []
    for s, tab in enumerate(index.unique_tables):
        n, m = tab.n, tab.m
        k = n - m
        P = index.multiplicities[s]
        base = len(lower)
        for p, d in enumerate(enumerate_delta_tables(tab)):
            A, C = d.treated_positives, d.control_positives
            T = A + C
            lower.append(0)
            upper.append(P)  # implied by the class equality
            obj.append(Fraction(d.d01 + d.d11 - d.d00 - d.d10, N))
            if not weak:
                u.append(A - Fraction(m, n) * T)
                q1.append(-chi2 * Fraction(m * k * T * (n - T), n * n * (n - 1)))
            else:
                u.append(Fraction(n * A, N * m) - Fraction(n * C, N * k))
                w = Fraction(n * n, N * N)
                var = Fraction(A * (m - A), m * m * (m - 1)) + Fraction(C * (k - C), k * k * (k - 1))
                q1.append(-chi2 * w * var)
            meta.append(VarMeta("delta", s, p, d))
        members = tuple(range(base, len(lower)))
        blocks.append(QuadBlock(members))
        eqs.append(Equality(members, P))
    return IqclpProblem(
        lower=tuple(lower),
        upper=tuple(upper),
        objective=tuple(obj),
        objective_constant=_negatives_share(exp),
        quad=QuadForm(tuple(u), tuple(blocks)),
        quad_linear=tuple(q1),
        sense=_direction(direction, exp, alpha, weak).sense,
        equalities=tuple(eqs),
        var_meta=tuple(meta),
        formulation=formulation,
        chi2=chi2,
    )


def build_p1(exp: StratifiedExperiment, alpha=Fraction(1, 20), direction=None) -> IqclpProblem:
    """Per-stratum program for the sharp null.

    ``direction`` defaults to the chi-square decision on the measured outcomes.
    """
    return _per_stratum(exp, alpha, direction, False, Formulation.P1)


def build_p2(exp: StratifiedExperiment, alpha=Fraction(1, 20), index: UniqueTableIndex | None = None,
             direction=None) -> IqclpProblem:
    """Per-class program for the sharp null."""
    return _per_class(exp, alpha, index, direction, False, Formulation.P2)


def build_p3(exp: StratifiedExperiment, alpha=Fraction(1, 20), direction=None) -> IqclpProblem:
    """Per-stratum program for the weak null; needs two subjects per arm."""
    _check_arm_sizes(exp)
    return _per_stratum(exp, alpha, direction, True, Formulation.P3)


def build_p4(exp: StratifiedExperiment, alpha=Fraction(1, 20), index: UniqueTableIndex | None = None,
             direction=None) -> IqclpProblem:
    """Per-class program for the weak null; needs two subjects per arm."""
    _check_arm_sizes(exp)
    return _per_class(exp, alpha, index, direction, True, Formulation.P4)


BUILDERS = {
    Formulation.P1: build_p1,
    Formulation.P2: build_p2,
    Formulation.P3: build_p3,
    Formulation.P4: build_p4,
}


# -- moving between outcome vectors and program variables ---------------------

def _stratum_upsilon(stratum, y_piece) -> tuple[int, int, int, int]:
    c = [0, 0, 0, 0]
    for z, ystar, v in zip(stratum.treated, stratum.outcome, y_piece):
        if v:
            c[2 * z + ystar] += 1
    return tuple(c)


def encode_outcome(exp: StratifiedExperiment, problem: IqclpProblem, y: Sequence[int]) -> list[int]:
    """Program point corresponding to a true-outcome vector ``y``."""
    pieces = exp.split(y)
    if problem.var_meta[0].kind == "upsilon":
        x = []
        for s, piece in zip(exp.strata, pieces):
            x.extend(_stratum_upsilon(s, piece))
        return x
    x = [0] * problem.num_vars
    first: dict[int, int] = {}
    for v, meta in enumerate(problem.var_meta):
        first.setdefault(meta.unit, v)
    index = build_index(exp)
    for i, (s, piece) in enumerate(zip(exp.strata, pieces)):
        cls = index.stratum_to_class[i]
        d = DeltaTable(*_stratum_upsilon(s, piece))
        x[first[cls] + delta_index(index.unique_tables[cls], d)] += 1
    return x


def _fill_stratum(stratum, counts) -> list[int]:
    """True outcomes of one stratum with ``counts[ab]`` true positives per cell.

    Alterations go to the lowest-index subjects of each cell: in a measured
    negative cell the first ``U`` subjects become positive; in a measured
    positive cell the first ``Lambda - U`` subjects become negative.
    """
    table = stratum.table().as_tuple()
    out = list(stratum.outcome)
    seen = [0, 0, 0, 0]
    for j, (z, ystar) in enumerate(zip(stratum.treated, stratum.outcome)):
        cell = 2 * z + ystar
        pos = seen[cell]
        seen[cell] += 1
        if ystar == 0:
            out[j] = 1 if pos < counts[cell] else 0
        else:
            out[j] = 0 if pos < table[cell] - counts[cell] else 1
    return out


def decode_outcome(exp: StratifiedExperiment, problem: IqclpProblem, x: Sequence[int]) -> tuple[int, ...]:
    """Canonical true-outcome vector for a program point.

    Per-class points assign the Delta tables of a class, in lexicographic
    order, to the member strata in input order.
    """
    problem.check_point(x)
    if problem.var_meta[0].kind == "upsilon":
        out = []
        for i, s in enumerate(exp.strata):
            out.extend(_fill_stratum(s, x[4 * i:4 * i + 4]))
        return tuple(out)
    index = build_index(exp)
    queues: dict[int, list[DeltaTable]] = {}
    for v, meta in enumerate(problem.var_meta):
        queues.setdefault(meta.unit, []).extend([meta.delta] * x[v])
    out = []
    for i, s in enumerate(exp.strata):
        d = queues[index.stratum_to_class[i]].pop(0)
        out.extend(_fill_stratum(s, d.as_tuple()))
    return tuple(out)


# -- text dump ----------------------------------------------------------------

DUMP_HEADER = "# outcome-audit iqclp v1"


def _meta_text(meta: VarMeta | None) -> str:
    if meta is None:
        return "-"
    if meta.kind == "upsilon":
        return f"upsilon:{meta.unit}:{meta.component}"
    return f"delta:{meta.unit}:{meta.component}:" + ",".join(map(str, meta.delta.as_tuple()))


def _meta_parse(text: str) -> VarMeta | None:
    if text == "-":
        return None
    parts = text.split(":")
    if parts[0] == "upsilon":
        return VarMeta("upsilon", int(parts[1]), parts[2])
    if parts[0] == "delta":
        delta = DeltaTable(*(int(v) for v in parts[3].split(",")))
        return VarMeta("delta", int(parts[1]), int(parts[2]), delta)
    raise ValueError(f"unknown variable metadata {text!r}")


def dump_problem(problem: IqclpProblem) -> str:
    """Render a program as line-oriented text (see docs/formats.md)."""
    out = io.StringIO()
    w = out.write
    w(DUMP_HEADER + "\n")
    w(f"formulation {problem.formulation.value if problem.formulation else '-'}\n")
    w(f"sense {problem.sense.value}\n")
    w(f"chi2 {problem.chi2 if problem.chi2 is not None else '-'}\n")
    w(f"objective_constant {problem.objective_constant}\n")
    w(f"degenerate_accept {int(problem.degenerate_accept)}\n")
    w(f"variables {problem.num_vars}\n")
    metas = problem.var_meta or (None,) * problem.num_vars
    for i in range(problem.num_vars):
        w(
            f"var {i} {problem.lower[i]} {problem.upper[i]} {problem.objective[i]} "
            f"{problem.quad.rank_one[i]} {problem.quad_linear[i]} {_meta_text(metas[i])}\n"
        )
    w(f"blocks {len(problem.quad.blocks)}\n")
    for blk in problem.quad.blocks:
        w("block " + " ".join(map(str, blk.variables)) + "\n")
        for i, j, v in blk.entries:
            w(f"entry {i} {j} {v}\n")
    w(f"equalities {len(problem.equalities)}\n")
    for eq in problem.equalities:
        w(f"eq {eq.rhs} " + " ".join(map(str, eq.variables)) + "\n")
    w("end\n")
    return out.getvalue()


def load_problem(source: TextIO | str) -> IqclpProblem:
    """Parse the text produced by :func:`dump_problem`."""
    text = source if isinstance(source, str) else source.read()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != DUMP_HEADER:
        raise ValueError("not an iqclp dump (missing header line)")
    fields: dict[str, str] = {}
    lower, upper, obj, u, q1, metas = [], [], [], [], [], []
    blocks: list[tuple[list[int], list]] = []
    eqs = []
    for ln in lines[1:]:
        head, _, rest = ln.partition(" ")
        if head == "var":
            parts = rest.split()
            if int(parts[0]) != len(lower):
                raise ValueError(f"variables out of order at {ln!r}")
            lower.append(int(parts[1]))
            upper.append(int(parts[2]))
            obj.append(Fraction(parts[3]))
            u.append(Fraction(parts[4]))
            q1.append(Fraction(parts[5]))
            metas.append(_meta_parse(parts[6]))
        elif head == "block":
            blocks.append(([int(v) for v in rest.split()], []))
        elif head == "entry":
            i, j, v = rest.split()
            blocks[-1][1].append((int(i), int(j), Fraction(v)))
        elif head == "eq":
            parts = rest.split()
            eqs.append(Equality(tuple(int(v) for v in parts[1:]), int(parts[0])))
        elif head == "end":
            break
        else:
            fields[head] = rest
    if int(fields.get("variables", -1)) != len(lower):
        raise ValueError("variable count does not match the number of var lines")
    form = fields.get("formulation", "-")
    chi2 = fields.get("chi2", "-")
    return IqclpProblem(
        lower=tuple(lower),
        upper=tuple(upper),
        objective=tuple(obj),
        objective_constant=Fraction(fields["objective_constant"]),
        quad=QuadForm(tuple(u), tuple(QuadBlock(tuple(v), tuple(e)) for v, e in blocks)),
        quad_linear=tuple(q1),
        sense=QuadSense(fields["sense"]),
        equalities=tuple(eqs),
        var_meta=tuple(metas) if all(m is not None for m in metas) else (),
        formulation=None if form == "-" else Formulation(form),
        chi2=None if chi2 == "-" else Fraction(chi2),
        degenerate_accept=bool(int(fields.get("degenerate_accept", "1"))),
    )
