"""Exact branch and bound for the warning-accuracy programs, plus the oracle.

The solver reads the block structure of an :class:`IqclpProblem` and works
in an all-integer representation::

    G = c0 * S**2 + sum_b h_b        S = sum_b s_b

where ``S`` is the (scaled) rank-one linear form and ``h_b`` collects the
residual quadratic and linear terms of block ``b``.  ``K * g(x) = G`` for a
fixed positive integer ``K``, so the constraint is decided by integer sign
tests with no tolerance anywhere.

Before branching, variables of a block that are interchangeable in the
constraint (same rank-one coefficient, same residual row, same linear
coefficient, same equality) are merged into one aggregate; for a given
aggregate value the best split is a greedy fill by objective coefficient.
For the per-stratum programs this is the reduction to the treated and
control true-positive totals of each stratum.  See docs/formats.md for the
argument that the reduction loses no optimum.

Each block then becomes a list of options (joint aggregate values) sorted
by objective.  A block whose aggregates are linked only by a single
``sum == P`` equality with a linear objective (the per-class programs) can
instead be expanded into ``P`` identical copies choosing one aggregate each,
in non-decreasing option order.

Depth-first search visits blocks in order of decreasing size.  A node is
pruned when

* the best objective over the remaining box cannot beat the incumbent,
* interval bounds on ``S`` and ``sum h`` show ``G`` has the wrong sign
  everywhere (or the right sign everywhere, in which case the best
  completion is taken directly),
* a Lagrangian bound proves that no completion reaches the target.  For
  ``G <= 0`` it uses the tangent ``S**2 >= 2 mu S - mu**2``.  For ``G > 0``
  it uses ``+-S > sqrt(W / c0)`` with ``W = -sum h`` (one relaxation per sign
  of ``S``): any point beating the incumbent makes few alterations, which
  confines ``W`` to a short interval on which a verified chord bounds the
  square root from below.  Both make the bound separable over blocks.
  Multipliers are located in floating point and then rounded to integers,
  so every prune is an exact integer inequality.
"""

from __future__ import annotations

import enum
import itertools
import math
import sys
import threading
import time
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from .experiment import StratifiedExperiment
from .formulation import IqclpProblem, QuadSense, is_feasible, objective_value
from .inference import DecisionCache, NullSpec

ORACLE_CAP = 20
JOINT_OPTION_CAP = 500_000
COPIES_THRESHOLD = 2_000


class SolveStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    BUDGET_EXCEEDED = "BudgetExceeded"


@dataclass(frozen=True)
class SolverBudget:
    max_nodes: int = 50_000_000
    max_time: float = 3600.0

    def __post_init__(self):
        if self.max_nodes <= 0 or self.max_time <= 0:
            raise ValueError("solver budget fields must be positive")


@dataclass(frozen=True)
class SolveResult:
    """Outcome of :func:`solve`.

    With ``BudgetExceeded`` the objective and assignment (if any) belong to
    the best point found so far and ``lower_bound_only`` is set.
    """

    status: SolveStatus
    objective: Fraction | None
    assignment: tuple[int, ...] | None
    nodes_explored: int
    wall_time: float
    lower_bound_only: bool = False

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


class _BudgetHit(Exception):
    pass


def _lcm(values) -> int:
    return reduce(lambda a, b: a * b // math.gcd(a, b), values, 1)


# -- structure analysis -------------------------------------------------------

@dataclass
class _Group:
    variables: list[int]  # fill order: objective descending, then index
    coefs: list[int]  # scaled objective coefficient per variable
    lower: list[int]
    upper: list[int]
    u: Fraction
    q1: Fraction

    @property
    def lo(self) -> int:
        return sum(self.lower)

    @property
    def hi(self) -> int:
        return sum(self.upper)

    def objective(self, total: int) -> int:
        value = sum(c * lo for c, lo in zip(self.coefs, self.lower))
        rest = total - self.lo
        for c, lo, hi in zip(self.coefs, self.lower, self.upper):
            take = min(rest, hi - lo)
            value += c * take
            rest -= take
        return value

    def fill(self, total: int, x: list[int]) -> None:
        rest = total - self.lo
        for v, lo, hi in zip(self.variables, self.lower, self.upper):
            take = min(rest, hi - lo)
            x[v] = lo + take
            rest -= take


@dataclass
class _Block:
    groups: list[_Group]
    residual: dict[tuple[int, int], Fraction]  # aggregate-level, g <= h
    equalities: list[tuple[list[int], int]]  # (group indices, rhs)
    copies: int = 1
    options: list[tuple[int, ...]] | None = None  # joint aggregate values or group index
    obj: list[int] | None = None
    s: list[int] | None = None
    h: list[int] | None = None
    weight: int = 0
    _copies_mode: bool = False


class _Model:
    def __init__(self, problem: IqclpProblem, copies_threshold: int = COPIES_THRESHOLD):
        self.problem = problem
        n = problem.num_vars
        quad = problem.quad
        obj_den = _lcm(q.denominator for q in problem.objective)
        self.obj_den = obj_den
        obj_int = [int(q * obj_den) for q in problem.objective]

        # partition variables into blocks
        var_block = {}
        raw_blocks = []
        for blk in quad.blocks:
            local = {(i, j): v for i, j, v in blk.entries if v != 0}
            raw_blocks.append((list(blk.variables), local))
        for b, (vars_, _) in enumerate(raw_blocks):
            for v in vars_:
                var_block[v] = b
        for v in range(n):
            if v not in var_block:
                var_block[v] = len(raw_blocks)
                raw_blocks.append(([v], {}))
        eq_of = {}
        block_eqs: dict[int, list[int]] = {}
        for e, eq in enumerate(problem.equalities):
            owners = {var_block[v] for v in eq.variables}
            if len(owners) != 1:
                raise ValueError("equalities spanning several quadratic blocks are not supported")
            for v in eq.variables:
                if v in eq_of:
                    raise ValueError("a variable may appear in at most one equality")
                eq_of[v] = e
            block_eqs.setdefault(owners.pop(), []).append(e)

        self.blocks: list[_Block] = []
        for b, (vars_, local) in enumerate(raw_blocks):
            rows: list[dict[int, Fraction]] = [{} for _ in vars_]
            for (i, j), v in local.items():
                rows[i][j] = v
                rows[j][i] = v
            keys = {}
            order = []
            for li, v in enumerate(vars_):
                key = (quad.rank_one[v], problem.quad_linear[v], eq_of.get(v), tuple(sorted(rows[li].items())))
                if key not in keys:
                    keys[key] = len(order)
                    order.append([])
                order[keys[key]].append(li)
            groups = []
            for members in order:
                members.sort(key=lambda li: (-obj_int[vars_[li]], vars_[li]))
                gv = [vars_[li] for li in members]
                groups.append(
                    _Group(
                        gv,
                        [obj_int[v] for v in gv],
                        [problem.lower[v] for v in gv],
                        [problem.upper[v] for v in gv],
                        quad.rank_one[gv[0]],
                        problem.quad_linear[gv[0]],
                    )
                )
            rep = [members[0] for members in order]
            residual = {}
            for g in range(len(groups)):
                for h in range(g, len(groups)):
                    v = rows[rep[g]].get(rep[h])
                    if v:
                        residual[(g, h)] = v
            eqs = []
            for e in block_eqs.get(b, []):
                gidx = [g for g, grp in enumerate(groups) if eq_of.get(grp.variables[0]) == e]
                eqs.append((gidx, problem.equalities[e].rhs))
            self.blocks.append(_Block(groups, residual, eqs))

        # integer scaling
        s_den = _lcm(g.u.denominator for blk in self.blocks for g in blk.groups)
        h_den = _lcm(
            [g.q1.denominator for blk in self.blocks for g in blk.groups]
            + [v.denominator for blk in self.blocks for v in blk.residual.values()]
        )
        K = _lcm([s_den * s_den, h_den])
        self.s_den, self.K = s_den, K
        self.c0 = K // (s_den * s_den)

        for blk in self.blocks:
            self._enumerate(blk, copies_threshold)
        order = sorted(range(len(self.blocks)), key=lambda b: (-self.blocks[b].weight, b))
        self.blocks = [self.blocks[b] for b in order]

    def _enumerate(self, blk: _Block, copies_threshold: int) -> None:
        groups = blk.groups
        us = [int(g.u * self.s_den) for g in groups]
        ql = [int(g.q1 * self.K) for g in groups]
        res = {key: int(v * self.K) for key, v in blk.residual.items()}
        ranges = [range(g.lo, g.hi + 1) for g in groups]
        if len(blk.equalities) == 1:
            gidx, rhs = blk.equalities[0]
            ranges = [
                range(g.lo, min(g.hi, rhs) + 1) if i in gidx else ranges[i]
                for i, g in enumerate(groups)
            ]
        count = math.prod(len(r) for r in ranges)
        if self._copies_ok(blk) and count > copies_threshold:
            rhs = blk.equalities[0][1]
            opts = [(g,) for g in range(len(groups))]
            obj = [groups[g].coefs[0] for g in range(len(groups))]
            data = sorted(zip(opts, obj, us, ql), key=lambda t: (-t[1], t[0]))
            blk.options = [d[0] for d in data]
            blk.obj = [d[1] for d in data]
            blk.s = [d[2] for d in data]
            blk.h = [d[3] for d in data]
            blk.copies = rhs
            blk._copies_mode = True
            blk.weight = rhs
            return
        if count > JOINT_OPTION_CAP:
            raise ValueError(
                f"a block has {count} joint options, above the enumeration cap {JOINT_OPTION_CAP}"
            )
        data = []
        for vals in itertools.product(*ranges):
            if any(sum(vals[i] for i in gidx) != rhs for gidx, rhs in blk.equalities):
                continue
            o = sum(g.objective(v) for g, v in zip(groups, vals))
            s = sum(a * v for a, v in zip(us, vals))
            h = sum(a * v for a, v in zip(ql, vals))
            for (g, k), c in res.items():
                h += c * vals[g] * vals[k] * (1 if g == k else 2)
            data.append((vals, o, s, h))
        if not data:
            raise _Infeasible()
        data.sort(key=lambda t: (-t[1], t[0]))
        blk.options = [d[0] for d in data]
        blk.obj = [d[1] for d in data]
        blk.s = [d[2] for d in data]
        blk.h = [d[3] for d in data]
        blk.weight = sum(g.hi - g.lo for g in groups)

    @staticmethod
    def _copies_ok(blk: _Block) -> bool:
        if blk.residual or len(blk.equalities) != 1:
            return False
        gidx, rhs = blk.equalities[0]
        if len(gidx) != len(blk.groups) or rhs < 1:
            return False
        for g in blk.groups:
            if any(lo != 0 for lo in g.lower) or g.upper[0] < rhs:
                return False
        return True

    def decode(self, path: Sequence[int]) -> list[int]:
        x = list(self.problem.lower)
        pos = 0
        for blk in self.blocks:
            if blk._copies_mode:
                totals = [0] * len(blk.groups)
                for c in range(blk.copies):
                    totals[blk.options[path[pos + c]][0]] += 1
                pos += blk.copies
            else:
                totals = blk.options[path[pos]]
                pos += 1
            for g, t in zip(blk.groups, totals):
                g.fill(t, x)
        return x


class _Infeasible(Exception):
    pass


# -- search -------------------------------------------------------------------

def _suffix(values: list[int], fn) -> list[int]:
    out = list(values)
    for j in range(len(out) - 2, -1, -1):
        out[j] = fn(out[j], out[j + 1])
    return out


class _Search:
    def __init__(self, model: _Model, budget: SolverBudget, log: Callable[[str], None] | None):
        self.m = model
        self.leq = model.problem.sense is QuadSense.LEQ_ZERO
        self.dg = model.problem.degenerate_accept
        self.budget = budget
        self.log = log
        self.nodes = 0
        self.deadline = time.monotonic() + budget.max_time
        blocks = model.blocks
        self.nb = len(blocks)
        self.slot_base = []
        pos = 0
        for blk in blocks:
            self.slot_base.append(pos)
            pos += blk.copies
        self.nslots = pos
        self.path = [0] * pos
        self.best_obj: int | None = None
        self.best_path: list[int] | None = None

        self.smin = [_suffix(b.s, min) for b in blocks]
        self.smax = [_suffix(b.s, max) for b in blocks]
        self.hmin = [_suffix(b.h, min) for b in blocks]
        self.hmax = [_suffix(b.h, max) for b in blocks]

        def tail(per_block):
            out = [0] * (self.nb + 1)
            for b in range(self.nb - 1, -1, -1):
                out[b] = out[b + 1] + blocks[b].copies * per_block(b)
            return out

        self.t_obj = tail(lambda b: blocks[b].obj[0])
        self.t_smin = tail(lambda b: self.smin[b][0])
        self.t_smax = tail(lambda b: self.smax[b][0])
        self.t_hmin = tail(lambda b: self.hmin[b][0])
        self.t_hmax = tail(lambda b: self.hmax[b][0])
        self.t_htop = tail(lambda b: blocks[b].h[0])
        self.obj_floor = sum(blk.copies * min(blk.obj) for blk in blocks)
        self.target = self.obj_floor
        self.family: list[tuple] = []
        self.gt_family: list[tuple[int, list[tuple]]] = []
        self.fv: _FloatView | None = None
        self.loss = [[blk.obj[0] - o for o in blk.obj] for blk in blocks]

    # G for a full choice vector
    def g_of(self, S: int, H: int) -> int:
        return self.m.c0 * S * S + H

    def feasible(self, S: int, H: int) -> bool:
        G = self.g_of(S, H)
        if self.leq:
            return G <= 0 or (self.dg and H == 0)
        return G > 0 and not (self.dg and H == 0)

    def best_degenerate(self) -> list[int] | None:
        """Best point with a zero variance part, if any (always Accept)."""
        path = []
        for blk in self.m.blocks:
            j = next((j for j, h in enumerate(blk.h) if h == 0), None)
            if j is None:
                return None
            path.extend([j] * blk.copies)
        return path

    def record(self, obj: int, path: list[int]) -> None:
        if self.best_obj is None or obj > self.best_obj:
            self.best_obj = obj
            self.best_path = list(path)
            self.target = obj + 1
            if not self.leq and self.fv is not None:
                self.refresh_gt()

    def totals(self, path: Sequence[int]) -> tuple[int, int, int]:
        obj = S = H = 0
        for b, blk in enumerate(self.m.blocks):
            base = self.slot_base[b]
            for c in range(blk.copies):
                j = path[base + c]
                obj += blk.obj[j]
                S += blk.s[j]
                H += blk.h[j]
        return obj, S, H

    def canonical(self, path: list[int]) -> list[int]:
        """Sort choices inside copies blocks so they satisfy the search order."""
        out = list(path)
        for b, blk in enumerate(self.m.blocks):
            if blk.copies > 1:
                base = self.slot_base[b]
                out[base:base + blk.copies] = sorted(out[base:base + blk.copies])
        return out

    # -- multipliers --

    def add_family(self, members: list[tuple[float, float]]) -> None:
        """Turn float multipliers into exact integer bound data."""
        m = self.m
        c0, K, s_den = m.c0, m.K, m.s_den
        for lam, mu in members:
            D, L = _integer_multiplier(lam, K)
            if L <= 0:
                continue
            mu_i = round(mu * s_den)
            self.family.append(self._member(D, -2 * L * c0 * mu_i, -L, L * c0 * mu_i * mu_i))

    def _member(self, D: int, al: int, be: int, ga: int) -> tuple:
        suf = []
        for blk in self.m.blocks:
            vals = [D * o + al * s + be * h for o, s, h in zip(blk.obj, blk.s, blk.h)]
            suf.append(_suffix(vals, max))
        tail = [0] * (self.nb + 1)
        for b in range(self.nb - 1, -1, -1):
            tail[b] = tail[b + 1] + self.m.blocks[b].copies * suf[b][0]
        return (D, al, be, ga, suf, tail)

    def _shift_bound(self, values: list[list[int]], budget: int) -> int:
        """Upper bound on the sum of ``values`` (relative to option 0) over
        all choices whose total objective loss is at most ``budget``."""
        blocks = self.m.blocks
        deltas = [[v - vals[0] for v in vals] for vals in values]
        best = sum(blk.copies * max(d) for blk, d in zip(blocks, deltas))
        flat_d = np.array([float(x) for d in deltas for x in d])
        flat_l = np.array([float(x) for ls in self.loss for x in ls])
        fv = self.fv

        def f(rho):
            return fv._blockmax(flat_d - rho * flat_l) + rho * budget

        pos = flat_l > 0
        if not pos.any():
            return best
        hi = float(np.max(np.abs(flat_d[pos]) / flat_l[pos])) + 1.0
        rho_f, _ = _golden(f, 0.0, hi, 80)
        for rho in {math.floor(rho_f), math.ceil(rho_f)}:
            total = rho * budget
            for blk, d, ls in zip(blocks, deltas, self.loss):
                total += blk.copies * max(x - rho * y for x, y in zip(d, ls))
            best = min(best, total)
        return best

    def refresh_gt(self) -> None:
        """Rebuild the G > 0 bounds for the current target."""
        self.gt_family = []
        budget = self.t_obj[0] - self.target
        if budget < 0 or self.t_hmax[0] > 0:
            return
        blocks = self.m.blocks
        h_top = self.t_htop[0]
        h_hi = min(self.t_hmax[0], h_top + self._shift_bound([b.h for b in blocks], budget))
        h_lo = max(self.t_hmin[0], h_top - self._shift_bound([[-h for h in b.h] for b in blocks], budget))
        w_lo, w_hi = max(0, -h_hi), max(0, -h_lo)
        gamma, beta = _sqrt_chord(w_lo, w_hi, self.m.c0)
        den = _lcm([gamma.denominator, beta.denominator])
        C, B = int(gamma * den), int(beta * den)
        fv = self.fv
        s_int = fv.s * self.m.s_den
        h_int = fv.h * self.m.K
        for sigma in (1, -1):
            expr = sigma * s_int + float(beta) * h_int

            def bound(log_lam):
                lam = math.exp(log_lam)
                return fv._blockmax(fv.obj + lam * expr) - lam * float(gamma)

            grid = [k * math.log(10) for k in range(-70, 11)]
            vals = [bound(g) for g in grid]
            k = int(np.argmin(vals))
            log_lam, _ = _golden(bound, grid[max(0, k - 1)], grid[min(len(grid) - 1, k + 1)], 60)
            members = []
            for f in (1.0, 0.5, 2.0):
                D, L = _integer_multiplier(math.exp(log_lam) * f, den)
                if L > 0:
                    members.append(self._member(D, L * den * sigma, L * B, -L * C))
            self.gt_family.append((sigma, members))

    # -- depth first search --

    def run(self) -> None:
        need = self.nslots + 200
        if need < 900:
            self._visit(0, 0, 0, 0, 0, 0)
            return
        # deep searches run on a thread with a large stack
        old_limit = sys.getrecursionlimit()
        old_stack = threading.stack_size()
        box: list[BaseException] = []

        def target():
            try:
                self._visit(0, 0, 0, 0, 0, 0)
            except BaseException as exc:  # re-raised in the caller
                box.append(exc)

        sys.setrecursionlimit(max(old_limit, 2 * need))
        threading.stack_size(min(1 << 30, max(1 << 26, need * 4096)))
        try:
            th = threading.Thread(target=target)
            th.start()
            th.join()
        finally:
            threading.stack_size(old_stack)
            sys.setrecursionlimit(old_limit)
        if box:
            raise box[0]

    def _complete(self, b: int, c: int, jp: int, obj: int) -> None:
        path = list(self.path)
        blocks = self.m.blocks
        base = self.slot_base[b]
        for k in range(c, blocks[b].copies):
            path[base + k] = jp
        for t in range(b + 1, self.nb):
            base = self.slot_base[t]
            for k in range(blocks[t].copies):
                path[base + k] = 0
        self.record(obj, path)

    def _visit(self, b: int, c: int, jp: int, obj: int, S: int, H: int) -> None:
        self.nodes += 1
        if self.nodes > self.budget.max_nodes or (
            self.nodes & 4095 == 0 and time.monotonic() > self.deadline
        ):
            raise _BudgetHit()
        log = self.log
        if b == self.nb:
            if obj >= self.target and self.feasible(S, H):
                self.record(obj, self.path)
                if log:
                    log(f"node {self.nodes} depth {self.nslots} leaf incumbent {obj}")
            elif log:
                log(f"node {self.nodes} depth {self.nslots} leaf rejected")
            return
        blk = self.m.blocks[b]
        r = blk.copies - c
        t = b + 1
        ob = obj + r * blk.obj[jp] + self.t_obj[t]
        target = self.target
        if ob < target:
            if log:
                log(f"node {self.nodes} depth {self.slot_base[b] + c} bound {ob} prune objective")
            return
        s_lo = S + r * self.smin[b][jp] + self.t_smin[t]
        s_hi = S + r * self.smax[b][jp] + self.t_smax[t]
        h_lo = H + r * self.hmin[b][jp] + self.t_hmin[t]
        h_hi = H + r * self.hmax[b][jp] + self.t_hmax[t]
        if s_lo > 0:
            sq_lo = s_lo * s_lo
        elif s_hi < 0:
            sq_lo = s_hi * s_hi
        else:
            sq_lo = 0
        sq_hi = max(s_lo * s_lo, s_hi * s_hi)
        c0 = self.m.c0
        g_lo = c0 * sq_lo + h_lo
        g_hi = c0 * sq_hi + h_hi
        if self.leq:
            if g_lo > 0:
                if log:
                    log(f"node {self.nodes} depth {self.slot_base[b] + c} bound {ob} prune constraint")
                return
            if g_hi <= 0:
                self._complete(b, c, jp, ob)
                if log:
                    log(f"node {self.nodes} depth {self.slot_base[b] + c} bound {ob} complete")
                return
        else:
            if g_hi <= 0:
                if log:
                    log(f"node {self.nodes} depth {self.slot_base[b] + c} bound {ob} prune constraint")
                return
            if g_lo > 0 and not (self.dg and H + r * blk.h[jp] + self.t_htop[t] == 0):
                self._complete(b, c, jp, ob)
                if log:
                    log(f"node {self.nodes} depth {self.slot_base[b] + c} bound {ob} complete")
                return
        for D, al, be, ga, suf, tail in self.family:
            if D * obj + al * S + be * H + ga + r * suf[b][jp] + tail[t] < D * target:
                if log:
                    log(f"node {self.nodes} depth {self.slot_base[b] + c} bound {ob} prune lagrangian")
                return
        if self.gt_family:
            open_side = False
            for sigma, members in self.gt_family:
                if (sigma > 0 and s_hi <= 0) or (sigma < 0 and s_lo >= 0):
                    continue
                if not any(
                    D * obj + al * S + be * H + ga + r * suf[b][jp] + tail[t] < D * target
                    for D, al, be, ga, suf, tail in members
                ):
                    open_side = True
                    break
            if not open_side:
                if log:
                    log(f"node {self.nodes} depth {self.slot_base[b] + c} bound {ob} prune lagrangian")
                return
        if log:
            log(f"node {self.nodes} depth {self.slot_base[b] + c} bound {ob} branch")
        slot = self.slot_base[b] + c
        last = c + 1 == blk.copies
        objs, ss, hs = blk.obj, blk.s, blk.h
        tail_obj = self.t_obj[t]
        for j in range(jp, len(objs)):
            if obj + r * objs[j] + tail_obj < self.target:
                break
            self.path[slot] = j
            if last:
                self._visit(t, 0, 0, obj + objs[j], S + ss[j], H + hs[j])
            else:
                self._visit(b, c + 1, j, obj + objs[j], S + ss[j], H + hs[j])


# -- floating-point helpers: multipliers and incumbent heuristic --------------

class _FloatView:
    """Float copies of the option data in real units (G = S**2 + H)."""

    def __init__(self, search: _Search):
        m = search.m
        self.search = search
        blocks = m.blocks
        self.obj = np.array([o for blk in blocks for o in blk.obj], dtype=float)
        self.s = np.array([s / m.s_den for blk in blocks for s in blk.s], dtype=float)
        self.h = np.array([h / m.K for blk in blocks for h in blk.h], dtype=float)
        sizes = [len(blk.obj) for blk in blocks]
        self.starts = np.cumsum([0] + sizes[:-1]).astype(np.intp)
        self.copies = np.array([blk.copies for blk in blocks], dtype=float)
        self.s_lo = search.t_smin[0] / m.s_den
        self.s_hi = search.t_smax[0] / m.s_den

    def _blockmax(self, vals: np.ndarray) -> float:
        return float(np.dot(np.maximum.reduceat(vals, self.starts), self.copies))

    def leq_bound(self, lam: float, mu: float) -> float:
        return lam * mu * mu + self._blockmax(self.obj - lam * (2 * mu * self.s + self.h))

    def argmax_choice(self, vals: np.ndarray) -> list[int]:
        out = []
        ends = list(self.starts[1:]) + [len(vals)]
        for st, en in zip(self.starts, ends):
            out.append(int(np.argmax(vals[st:en])))
        return out


def _integer_multiplier(lam: float, scale: int) -> tuple[int, int]:
    """Integers ``(D, L)`` with ``L / D`` close to ``lam / scale``."""
    if not lam > 0 or not math.isfinite(lam):
        return 1, 0
    ratio = scale / lam
    e = max(0, math.ceil(math.log2(ratio)) + 40) if ratio > 1 else 40
    D = 1 << e
    return D, round(lam * D / scale)


def _sqrt_chord(w_lo: int, w_hi: int, c0: int) -> tuple[Fraction, Fraction]:
    """Rationals ``gamma, beta`` with ``gamma + beta*w <= sqrt(w / c0)`` on [w_lo, w_hi].

    The square root is concave, so checking both endpoints exactly suffices.
    """
    r_lo = math.sqrt(w_lo / c0)
    r_hi = math.sqrt(w_hi / c0)
    beta_f = (r_hi - r_lo) / (w_hi - w_lo) if w_hi > w_lo else 0.0
    beta = Fraction(beta_f) if beta_f > 0 else Fraction(0)
    gamma_f = r_lo - beta_f * w_lo
    slack = 1e-9 * (abs(gamma_f) + r_hi + 1.0)

    def ok(g: Fraction) -> bool:
        for w in (w_lo, w_hi):
            v = g + beta * w
            if v > 0 and c0 * v * v > w:
                return False
        return True

    while True:
        gamma = Fraction(gamma_f - slack)
        if ok(gamma):
            return gamma, beta
        slack *= 16


def _golden(f, lo: float, hi: float, iters: int = 60) -> tuple[float, float]:
    phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _multipliers(fv: _FloatView) -> list[tuple[float, float]]:
    """Approximate minimizers of the tangent Lagrangian bound (G <= 0)."""
    s_lo, s_hi = fv.s_lo, fv.s_hi
    if s_hi <= s_lo:
        s_hi = s_lo + 1.0

    def inner(lam):
        return _golden(lambda mu: fv.leq_bound(lam, mu), s_lo, s_hi, 50)

    def outer(log_lam):
        return inner(math.exp(log_lam))[1]

    grid = [k * math.log(10) for k in range(-20, 21)]
    vals = [outer(g) for g in grid]
    k = int(np.argmin(vals))
    lo = grid[max(0, k - 1)]
    hi = grid[min(len(grid) - 1, k + 1)]
    log_lam, _ = _golden(outer, lo, hi, 50)
    lam = math.exp(log_lam)
    out = []
    for f in (1.0, 0.8, 1.25, 0.5, 2.0):
        mu, _ = inner(lam * f)
        out.append((lam * f, mu))
    mu0 = out[0][1]
    width = (s_hi - s_lo) * 1e-3
    out.append((lam, mu0 - width))
    out.append((lam, mu0 + width))
    return out


class _Heuristic:
    """Greedy single-block moves to reach feasibility, then local improvement."""

    def __init__(self, search: _Search, fv: _FloatView):
        self.search = search
        self.fv = fv
        m = search.m
        self.slot_block = []
        for b, blk in enumerate(m.blocks):
            self.slot_block.extend([b] * blk.copies)
        idx = []
        slot_of = []
        for slot, b in enumerate(self.slot_block):
            st = int(fv.starts[b])
            n_opt = len(m.blocks[b].obj)
            idx.extend(range(st, st + n_opt))
            slot_of.extend([slot] * n_opt)
        self.flat = np.array(idx, dtype=np.intp)  # flat option index per (slot, option)
        self.slot_of = np.array(slot_of, dtype=np.intp)
        self.local = self.flat - fv.starts[self.slot_block][self.slot_of] if len(idx) else self.flat
        self.o = fv.obj[self.flat]
        self.s = fv.s[self.flat]
        self.h = fv.h[self.flat]

    def _state(self, path):
        return self.search.totals(path)

    def _real(self, S: int, H: int) -> tuple[float, float]:
        m = self.search.m
        return S / m.s_den, H / m.K

    def repair(self, path: list[int], direction: int = 0) -> list[int] | None:
        search = self.search
        leq = search.leq
        path = list(path)
        cur = np.array([self.fv.starts[self.slot_block[k]] + path[k] for k in range(len(path))], dtype=np.intp)
        for _ in range(4 * len(path) + 50):
            obj, S, H = self._state(path)
            if search.feasible(S, H):
                return path
            Sf, Hf = self._real(S, H)
            G = Sf * Sf + Hf
            base = cur[self.slot_of]
            ds = self.s - self.fv.s[base]
            dh = self.h - self.fv.h[base]
            loss = self.fv.obj[base] - self.o
            newG = (Sf + ds) ** 2 + Hf + dh
            if leq:
                gain = G - np.maximum(newG, 0.0)
            else:
                scale = max(abs(G), 1e-300)
                gain = np.minimum(newG, scale * 1e-9) - G
            if direction:
                gain = np.where(ds * direction > 0, gain, -1.0)
            ok = gain > 0
            if not ok.any():
                return None
            score = np.where(ok, gain / np.maximum(loss, 0.5), -np.inf)
            free = ok & (loss <= 0)
            if free.any():
                score = np.where(free, np.inf, score)
                # among free moves prefer the largest gain
                score = np.where(free, gain, -np.inf)
            k = int(np.argmax(score))
            slot = int(self.slot_of[k])
            path[slot] = int(self.local[k])
            cur[slot] = self.flat[k]
        obj, S, H = self._state(path)
        return path if search.feasible(S, H) else None

    def improve(self, path: list[int]) -> list[int]:
        search = self.search
        path = list(path)
        while True:
            obj, S, H = self._state(path)
            cur = np.array([self.fv.starts[self.slot_block[k]] + path[k] for k in range(len(path))], dtype=np.intp)
            base = cur[self.slot_of]
            gain = self.o - self.fv.obj[base]
            cand = np.nonzero(gain > 0)[0]
            if not len(cand):
                return path
            order = cand[np.lexsort((cand, -gain[cand]))]
            moved = False
            m = search.m
            for k in order[:2000]:
                slot = int(self.slot_of[k])
                b = self.slot_block[slot]
                blk = m.blocks[b]
                old = path[slot]
                new = int(self.local[k])
                S2 = S - blk.s[old] + blk.s[new]
                H2 = H - blk.h[old] + blk.h[new]
                if search.feasible(S2, H2):
                    path[slot] = new
                    moved = True
                    break
            if not moved:
                return path


# -- public API ---------------------------------------------------------------

def solve(
    problem: IqclpProblem,
    budget: SolverBudget | None = None,
    log: Callable[[str], None] | None = None,
    copies_threshold: int = COPIES_THRESHOLD,
) -> SolveResult:
    """Maximize the objective of ``problem`` exactly.

    ``log`` receives one line per search node when given.
    """
    budget = budget or SolverBudget()
    t0 = time.monotonic()
    try:
        model = _Model(problem, copies_threshold)
    except _Infeasible:
        return SolveResult(SolveStatus.INFEASIBLE, None, None, 0, time.monotonic() - t0)
    search = _Search(model, budget, log)

    # incumbent: best objective point, Lagrangian point, greedy repairs
    top = [0] * search.nslots  # option 0 everywhere maximizes the objective
    obj, S, H = search.totals(top)
    hit_budget = False
    if search.leq and search.dg:
        # every zero-variance point accepts; the best of them is separable, and
        # with it as incumbent the search only needs points with g <= 0
        degenerate = search.best_degenerate()
        if degenerate is not None:
            search.record(search.totals(degenerate)[0], degenerate)
    if search.feasible(S, H):
        search.record(obj, top)
    else:
        fv = _FloatView(search)
        heur = _Heuristic(search, fv)
        starts = [top]
        if search.leq:
            members = _multipliers(fv)
            search.add_family(members)
            lam, mu = members[0]
            choice = fv.argmax_choice(fv.obj - lam * (2 * mu * fv.s + fv.h))
            starts.append([choice[b] for b in heur.slot_block])
        directions = (0,) if search.leq else (0, 1, -1)
        for start in starts:
            for direction in directions:
                found = heur.repair(start, direction)
                if found is not None:
                    found = search.canonical(heur.improve(found))
                    f_obj, f_S, f_H = search.totals(found)
                    if search.feasible(f_S, f_H):
                        search.record(f_obj, found)
        if not search.leq:
            search.fv = fv
            search.refresh_gt()
        try:
            search.run()
        except _BudgetHit:
            hit_budget = True
    wall = time.monotonic() - t0
    if search.best_path is None:
        status = SolveStatus.BUDGET_EXCEEDED if hit_budget else SolveStatus.INFEASIBLE
        return SolveResult(status, None, None, search.nodes, wall, hit_budget)
    x = model.decode(search.best_path)
    value = objective_value(problem, x)
    expected = problem.objective_constant + Fraction(search.best_obj, model.obj_den)
    if value != expected or not is_feasible(problem, x):
        raise AssertionError("decoded solution failed exact verification")
    status = SolveStatus.BUDGET_EXCEEDED if hit_budget else SolveStatus.OPTIMAL
    return SolveResult(status, value, tuple(x), search.nodes, wall, hit_budget)


# -- brute-force oracle -------------------------------------------------------

class _NotOverturnable:
    """Marker for an experiment whose decision no outcome vector can flip."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NotOverturnable"

    def __bool__(self) -> bool:
        return False


NOT_OVERTURNABLE = _NotOverturnable()


@dataclass(frozen=True)
class OracleResult:
    warning_accuracy: Fraction | _NotOverturnable
    witness: tuple[int, ...] | None
    optima: tuple[tuple[int, ...], ...] = ()

    @property
    def overturnable(self) -> bool:
        return self.witness is not None


def brute_force_wa(
    exp: StratifiedExperiment,
    null_spec: NullSpec | None = None,
    cap: int = ORACLE_CAP,
    all_optima: bool = False,
) -> OracleResult:
    """Warning accuracy by checking every one of the 2**N outcome vectors.

    Ties are broken toward the lexicographically smallest witness (subject
    order as in the experiment).  ``all_optima`` also returns every
    maximizing vector in lexicographic order.
    """
    spec = null_spec or NullSpec()
    N = exp.N
    if N > cap:
        raise ValueError(f"brute force needs N <= {cap}, got N = {N}")
    cache = DecisionCache(exp, spec)
    measured = cache.decision(exp.outcome)
    idx = np.arange(1 << N, dtype=np.int64)
    bits = ((idx[:, None] >> np.arange(N - 1, -1, -1, dtype=np.int64)) & 1).astype(np.int8)
    ystar = np.array(exp.outcome, dtype=np.int8)
    agree = (bits == ystar).sum(axis=1)
    key = np.zeros(len(idx), dtype=np.int64)
    pos = 0
    radix = 1
    for s in exp.strata:
        z = np.array(s.treated, dtype=bool)
        block = bits[:, pos:pos + s.n]
        t = block[:, z].sum(axis=1).astype(np.int64)
        c = block[:, ~z].sum(axis=1).astype(np.int64)
        key += radix * (t * (s.n - s.m + 1) + c)
        radix *= (s.m + 1) * (s.n - s.m + 1)
        pos += s.n
    uniq, inverse = np.unique(key, return_inverse=True)
    flips = np.zeros(len(uniq), dtype=bool)
    for u, code in enumerate(uniq.tolist()):
        parts = []
        for s in exp.strata:
            base = (s.m + 1) * (s.n - s.m + 1)
            code, rem = divmod(code, base)
            parts.append(divmod(rem, s.n - s.m + 1))
        flips[u] = cache.decision_for_counts(tuple(parts)) is not measured
    mask = flips[inverse.reshape(-1)]
    if not mask.any():
        return OracleResult(NOT_OVERTURNABLE, None)
    scores = np.where(mask, agree, -1)
    best = int(scores.max())
    first = int(np.argmax(scores))
    witness = tuple(int(v) for v in bits[first])
    optima: tuple = ()
    if all_optima:
        optima = tuple(tuple(int(v) for v in bits[i]) for i in np.nonzero(scores == best)[0])
    return OracleResult(Fraction(best, N), witness, optima)


def _arm_options(size: int, measured: int, deviation: int) -> list[int]:
    if deviation == 0:
        return [measured]
    return [v for v in (measured - deviation, measured + deviation) if 0 <= v <= size]


def _lexmin_arm(values: list[int], target: int) -> list[int]:
    # smallest vector (in subject order) with `target` ones at minimal distance
    ones = sum(values)
    out = list(values)
    if target > ones:
        need = target - ones
        for j in range(len(out) - 1, -1, -1):
            if need and out[j] == 0:
                out[j] = 1
                need -= 1
    elif target < ones:
        need = ones - target
        for j in range(len(out)):
            if need and out[j] == 1:
                out[j] = 0
                need -= 1
    return out


def count_space_wa(
    exp: StratifiedExperiment,
    null_spec: NullSpec | None = None,
    cap: int = 10**6,
) -> OracleResult:
    """Warning accuracy by searching per-stratum positive counts.

    Every decision depends on the outcomes only through the number of
    positives in each arm of each stratum, and for a fixed count ``t`` in
    an arm with ``a`` measured positives the best attainable number of
    disagreements is ``|t - a|``.  Count vectors are therefore visited in
    order of increasing total disagreement and the search stops at the first
    level containing a flip.  The witness is the lexicographically smallest
    optimal vector, the same one :func:`brute_force_wa` returns.  ``cap``
    bounds the number of count vectors whose decision is evaluated.
    """
    spec = null_spec or NullSpec()
    cache = DecisionCache(exp, spec)
    measured = cache.decision(exp.outcome)
    arms = []  # (size, measured positives) for treated then control, per stratum
    for s in exp.strata:
        tab = s.table()
        arms.append((s.m, tab.c11))
        arms.append((s.n - s.m, tab.c01))
    slack = [max(a, size - a) for size, a in arms]
    suffix = [0] * (len(arms) + 1)
    for i in range(len(arms) - 1, -1, -1):
        suffix[i] = suffix[i + 1] + slack[i]
    evaluated = 0

    def level(i: int, remaining: int, acc: list[int]):
        if i == len(arms):
            if remaining == 0:
                yield tuple(acc)
            return
        if remaining > suffix[i]:
            return
        size, a = arms[i]
        for dev in range(0, min(remaining, slack[i]) + 1):
            for v in _arm_options(size, a, dev):
                acc.append(v)
                yield from level(i + 1, remaining - dev, acc)
                acc.pop()

    for loss in range(1, suffix[0] + 1):
        hits = []
        for counts in level(0, loss, []):
            evaluated += 1
            if evaluated > cap:
                raise ValueError(f"count-space search evaluated more than {cap} count vectors")
            key = tuple((counts[2 * i], counts[2 * i + 1]) for i in range(exp.I))
            if cache.decision_for_counts(key) is not measured:
                hits.append(key)
        if hits:
            best = min(_lexmin_witness(exp, key) for key in hits)
            return OracleResult(Fraction(exp.N - loss, exp.N), best)
    return OracleResult(NOT_OVERTURNABLE, None)


def _lexmin_witness(exp: StratifiedExperiment, key) -> tuple[int, ...]:
    out: list[int] = []
    for s, (t, c) in zip(exp.strata, key):
        treated = [y for z, y in zip(s.treated, s.outcome) if z]
        control = [y for z, y in zip(s.treated, s.outcome) if not z]
        it_t = iter(_lexmin_arm(treated, t))
        it_c = iter(_lexmin_arm(control, c))
        out.extend(next(it_t) if z else next(it_c) for z in s.treated)
    return tuple(out)
