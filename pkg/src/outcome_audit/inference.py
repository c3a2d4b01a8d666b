"""Randomization tests for stratified binary outcomes.

Everything here is exact rational arithmetic.  The chi-square critical value
is the only irrational input; it is rationalized once by
:func:`chisq_quantile` and used exactly from then on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb, prod
from typing import Sequence

import mpmath

from .experiment import StratifiedExperiment

DEFAULT_ENUMERATION_CAP = 10**6


class Decision(str, enum.Enum):
    REJECT = "Reject"
    ACCEPT = "Accept"

    def flipped(self) -> "Decision":
        return Decision.ACCEPT if self is Decision.REJECT else Decision.REJECT


class NullKind(str, enum.Enum):
    SHARP = "sharp"
    WEAK = "weak"


class DecisionMethod(str, enum.Enum):
    CHI_SQUARE = "chisq"
    EXACT = "exact"


class Sidedness(str, enum.Enum):
    ONE_SIDED_UPPER = "one"
    TWO_SIDED = "two"


class EnumerationCapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class NullSpec:
    null_kind: NullKind = NullKind.SHARP
    alpha: Fraction = Fraction(1, 20)
    decision_method: DecisionMethod = DecisionMethod.CHI_SQUARE
    sidedness: Sidedness = Sidedness.ONE_SIDED_UPPER
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        alpha = Fraction(self.alpha)
        object.__setattr__(self, "alpha", alpha)
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        object.__setattr__(self, "null_kind", NullKind(self.null_kind))
        object.__setattr__(self, "decision_method", DecisionMethod(self.decision_method))
        object.__setattr__(self, "sidedness", Sidedness(self.sidedness))
        if self.decision_method is DecisionMethod.EXACT and self.null_kind is NullKind.WEAK:
            raise ValueError("exact enumeration is only defined for the sharp null")


@dataclass(frozen=True)
class TestDecision:
    statistic: Fraction
    threshold: Fraction
    decision: Decision
    degenerate: bool
    p_value: Fraction | None = None

    @property
    def rejects(self) -> bool:
        return self.decision is Decision.REJECT


# -- chi-square critical value ------------------------------------------------

@lru_cache(maxsize=None)
def chisq_quantile(alpha: Fraction | float | str) -> Fraction:
    """Rational approximation of the upper-``alpha`` point of chi-square(1).

    Computed as the square of the standard normal ``1 - alpha/2`` quantile
    with 40-digit arithmetic, then rationalized with the smallest
    denominator that keeps the error below 1e-14.
    """
    alpha = Fraction(alpha)
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    with mpmath.workdps(40):
        a = mpmath.mpf(alpha.numerator) / alpha.denominator
        z = mpmath.sqrt(2) * mpmath.erfinv(1 - a)
        man, exp = (z * z).man_exp
        exact = Fraction(int(man)) * Fraction(2) ** int(exp)
    tol = Fraction(1, 10**14) * min(1, exact)
    bound = 10**6
    while True:
        approx = exact.limit_denominator(bound)
        if abs(approx - exact) < tol:
            return approx
        bound *= 10


# -- Mantel-Haenszel ----------------------------------------------------------

def _check(exp: StratifiedExperiment, y: Sequence[int]) -> None:
    if len(y) != exp.N:
        raise ValueError(f"outcome vector has length {len(y)}, expected {exp.N}")


def _stratum_counts(exp: StratifiedExperiment, y: Sequence[int]):
    """Yield (n, m, positives, treated positives, control positives) per stratum."""
    pos = 0
    for s in exp.strata:
        total = treated_pos = 0
        for z, v in zip(s.treated, y[pos:pos + s.n]):
            total += v
            treated_pos += z & v
        pos += s.n
        yield s.n, s.m, total, treated_pos, total - treated_pos


def mh_statistic(exp: StratifiedExperiment, y: Sequence[int]) -> Fraction:
    """Number of treated positives."""
    _check(exp, y)
    return Fraction(sum(t for _, _, _, t, _ in _stratum_counts(exp, y)))


def mh_moments(exp: StratifiedExperiment, y: Sequence[int]) -> tuple[Fraction, Fraction]:
    """Null mean and variance of the treated-positive count under the sharp null."""
    _check(exp, y)
    mean = Fraction(0)
    var = Fraction(0)
    for n, m, total, _, _ in _stratum_counts(exp, y):
        mean += Fraction(m * total, n)
        var += Fraction(m * total * (n - total) * (n - m), n * n * (n - 1))
    return mean, var


def moments_from_counts(counts: Sequence[tuple[int, int, int, int]]) -> tuple[Fraction, Fraction, Fraction]:
    """(T, E, Var) from per-stratum (n, m, positives, treated positives)."""
    t = 0
    mean = Fraction(0)
    var = Fraction(0)
    for n, m, total, treated_pos in counts:
        t += treated_pos
        mean += Fraction(m * total, n)
        var += Fraction(m * total * (n - total) * (n - m), n * n * (n - 1))
    return Fraction(t), mean, var


def _chisq_decision(num: Fraction, var: Fraction, alpha: Fraction) -> TestDecision:
    chi2 = chisq_quantile(alpha)
    if var == 0:
        return TestDecision(Fraction(0), chi2, Decision.ACCEPT, True)
    stat = num / var
    decision = Decision.REJECT if stat > chi2 else Decision.ACCEPT
    return TestDecision(stat, chi2, decision, False)


def mh_decision(exp: StratifiedExperiment, y: Sequence[int], alpha) -> TestDecision:
    """Chi-square Mantel-Haenszel decision; zero null variance always accepts."""
    t = mh_statistic(exp, y)
    mean, var = mh_moments(exp, y)
    return _chisq_decision((t - mean) ** 2, var, Fraction(alpha))


# -- Neyman -------------------------------------------------------------------

def neyman_statistic(exp: StratifiedExperiment, y: Sequence[int]) -> Fraction:
    """Size-weighted average of within-stratum differences in means."""
    _check(exp, y)
    N = exp.N
    total = Fraction(0)
    for n, m, _, t, c in _stratum_counts(exp, y):
        total += Fraction(n, N) * (Fraction(t, m) - Fraction(c, n - m))
    return total


def _check_arm_sizes(exp: StratifiedExperiment) -> None:
    for s in exp.strata:
        if s.m < 2 or s.n - s.m < 2:
            raise ValueError(
                f"stratum {s.label!r}: the plug-in variance needs at least two subjects "
                f"per arm (treated={s.m}, control={s.n - s.m})"
            )


def neyman_varhat(exp: StratifiedExperiment, y: Sequence[int]) -> Fraction:
    """Conservative plug-in variance of the Neyman estimator."""
    _check(exp, y)
    _check_arm_sizes(exp)
    N = exp.N
    total = Fraction(0)
    for n, m, _, t, c in _stratum_counts(exp, y):
        k = n - m
        # binary arm: sum of squared deviations is t - t^2/m
        s2_t = Fraction(t * (m - t), m * (m - 1))
        s2_c = Fraction(c * (k - c), k * (k - 1))
        total += Fraction(n * n, N * N) * (s2_t / m + s2_c / k)
    return total


def neyman_decision(exp: StratifiedExperiment, y: Sequence[int], alpha) -> TestDecision:
    t = neyman_statistic(exp, y)
    var = neyman_varhat(exp, y)
    return _chisq_decision(t * t, var, Fraction(alpha))


# -- exact randomization distribution -----------------------------------------

def assignment_count(exp: StratifiedExperiment) -> int:
    return prod(comb(s.n, s.m) for s in exp.strata)


def null_distribution(counts: Sequence[tuple[int, int, int]]) -> list[int]:
    """Assignment counts of each treated-positive total under the sharp null.

    ``counts`` holds (n, m, positives) per stratum.  Entry ``t`` of the result
    is the number of assignments giving ``t`` treated positives; the entries
    sum to the product of the binomial coefficients C(n, m).
    """
    dist = [1]
    for n, m, total in counts:
        lo = max(0, m - (n - total))
        hi = min(m, total)
        local = [0] * (hi + 1)
        for t in range(lo, hi + 1):
            local[t] = comb(total, t) * comb(n - total, m - t)
        new = [0] * (len(dist) + hi)
        for a, wa in enumerate(dist):
            if wa:
                for b in range(lo, hi + 1):
                    new[a + b] += wa * local[b]
        dist = new
    return dist


@lru_cache(maxsize=200_000)
def _pvalue_from_counts(counts: tuple[tuple[int, int, int, int], ...], sidedness: Sidedness) -> Fraction:
    dist = null_distribution([(n, m, tot) for n, m, tot, _ in counts])
    total = sum(dist)
    t_obs = sum(t for *_, t in counts)
    if sidedness is Sidedness.ONE_SIDED_UPPER:
        hits = sum(dist[t_obs:])
    else:
        mean = sum(Fraction(m * tot, n) for n, m, tot, _ in counts)
        dev = abs(t_obs - mean)
        hits = sum(w for t, w in enumerate(dist) if abs(t - mean) >= dev)
    return Fraction(hits, total)


def _counts_key(exp: StratifiedExperiment, y: Sequence[int]) -> tuple[tuple[int, int, int, int], ...]:
    return tuple((n, m, tot, t) for n, m, tot, t, _ in _stratum_counts(exp, y))


def exact_randomization_pvalue(
    exp: StratifiedExperiment,
    y: Sequence[int],
    sidedness: Sidedness | str = Sidedness.ONE_SIDED_UPPER,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> Fraction:
    """Exact randomization p-value of the treated-positive count.

    One-sided: share of assignments with at least the observed count.
    Two-sided: share with a deviation from the null mean at least as large.
    The tail mass is counted stratum by stratum (hypergeometric convolution),
    which gives the same rational as enumerating every assignment.
    """
    _check(exp, y)
    size = assignment_count(exp)
    if size > cap:
        raise EnumerationCapExceeded(
            f"assignment space has {size} elements, above the enumeration cap {cap}"
        )
    return _pvalue_from_counts(_counts_key(exp, y), Sidedness(sidedness))


# -- generic decision ---------------------------------------------------------

def decide(exp: StratifiedExperiment, y: Sequence[int], spec: NullSpec) -> TestDecision:
    """The level-alpha decision for ``y`` under ``spec``."""
    if spec.decision_method is DecisionMethod.EXACT:
        p = exact_randomization_pvalue(exp, y, spec.sidedness, spec.enumeration_cap)
        _, var = mh_moments(exp, y)
        decision = Decision.REJECT if p <= spec.alpha else Decision.ACCEPT
        return TestDecision(mh_statistic(exp, y), spec.alpha, decision, var == 0, p)
    if spec.null_kind is NullKind.SHARP:
        return mh_decision(exp, y, spec.alpha)
    return neyman_decision(exp, y, spec.alpha)


class DecisionCache:
    """Memoized decisions keyed by the per-stratum sufficient counts.

    All tests here depend on the outcome vector only through, for each
    stratum, the number of positives in each arm.
    """

    def __init__(self, exp: StratifiedExperiment, spec: NullSpec):
        self.exp = exp
        self.spec = spec
        self._cache: dict[tuple, Decision] = {}
        if spec.decision_method is DecisionMethod.EXACT:
            size = assignment_count(exp)
            if size > spec.enumeration_cap:
                raise EnumerationCapExceeded(
                    f"assignment space has {size} elements, above the enumeration cap "
                    f"{spec.enumeration_cap}"
                )
        elif spec.null_kind is NullKind.WEAK:
            _check_arm_sizes(exp)
        self._chi2 = chisq_quantile(spec.alpha)

    def decision_for_counts(self, key: tuple[tuple[int, int], ...]) -> Decision:
        """``key`` holds (treated positives, control positives) per stratum."""
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        spec = self.spec
        strata = self.exp.strata
        if spec.decision_method is DecisionMethod.EXACT:
            counts = tuple((s.n, s.m, t + c, t) for s, (t, c) in zip(strata, key))
            p = _pvalue_from_counts(counts, spec.sidedness)
            out = Decision.REJECT if p <= spec.alpha else Decision.ACCEPT
        elif spec.null_kind is NullKind.SHARP:
            t_obs, mean, var = moments_from_counts(
                [(s.n, s.m, t + c, t) for s, (t, c) in zip(strata, key)]
            )
            out = _chisq_decision((t_obs - mean) ** 2, var, spec.alpha).decision
        else:
            N = self.exp.N
            est = Fraction(0)
            var = Fraction(0)
            for s, (t, c) in zip(strata, key):
                n, m = s.n, s.m
                k = n - m
                est += Fraction(n, N) * (Fraction(t, m) - Fraction(c, k))
                var += Fraction(n * n, N * N) * (
                    Fraction(t * (m - t), m * m * (m - 1)) + Fraction(c * (k - c), k * k * (k - 1))
                )
            out = _chisq_decision(est * est, var, spec.alpha).decision
        self._cache[key] = out
        return out

    def decision(self, y: Sequence[int]) -> Decision:
        _check(self.exp, y)
        key = tuple((t, c) for _, _, _, t, c in _stratum_counts(self.exp, y))
        return self.decision_for_counts(key)
