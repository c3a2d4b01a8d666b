"""Symmetry diagnostics and the deduplicated stratum-table index.

Two kinds of symmetry leave the sensitivity program invariant: permuting
subjects that share a stratum, arm and measured outcome (within strata), and
permuting strata with identical measured tables (between strata).  The
per-stratum formulation uses 4 variables per stratum and exploits the first
kind; the per-class formulation uses one variable per candidate 2x2x2 table
of each distinct measured table and exploits the second.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from math import lgamma, prod

from .experiment import StratifiedExperiment, StratumTable


@dataclass(frozen=True)
class DeltaTable:
    """Counts of true positives by arm and measured value within one stratum."""

    d00: int
    d01: int
    d10: int
    d11: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.d00, self.d01, self.d10, self.d11)

    @property
    def treated_positives(self) -> int:
        return self.d10 + self.d11

    @property
    def control_positives(self) -> int:
        return self.d00 + self.d01

    @property
    def positives(self) -> int:
        return self.d00 + self.d01 + self.d10 + self.d11


def delta_table_count(table: StratumTable) -> int:
    """Number of admissible Delta tables for a measured table."""
    return prod(c + 1 for c in table.as_tuple())


def enumerate_delta_tables(table: StratumTable) -> list[DeltaTable]:
    """All Delta tables inside the box of ``table``, in lexicographic order."""
    ranges = [range(c + 1) for c in table.as_tuple()]
    return [DeltaTable(*t) for t in itertools.product(*ranges)]


def delta_index(table: StratumTable, delta: DeltaTable) -> int:
    """Position of ``delta`` in ``enumerate_delta_tables(table)``."""
    idx = 0
    for bound, value in zip(table.as_tuple(), delta.as_tuple()):
        if not 0 <= value <= bound:
            raise ValueError(f"{delta} lies outside the box of {table}")
        idx = idx * (bound + 1) + value
    return idx


@dataclass(frozen=True)
class UniqueTableIndex:
    """Distinct measured stratum tables, their multiplicities and members.

    Classes are numbered in order of first appearance.
    """

    unique_tables: tuple[StratumTable, ...]
    multiplicities: tuple[int, ...]
    stratum_to_class: tuple[int, ...]

    @property
    def S(self) -> int:
        return len(self.unique_tables)

    def members(self, s: int) -> list[int]:
        """Stratum indices of class ``s`` in input order."""
        return [i for i, c in enumerate(self.stratum_to_class) if c == s]

    def delta_counts(self) -> list[int]:
        return [delta_table_count(t) for t in self.unique_tables]


def build_index(exp: StratifiedExperiment) -> UniqueTableIndex:
    tables: list[StratumTable] = []
    where: dict[StratumTable, int] = {}
    counts: list[int] = []
    mapping = []
    for s in exp.strata:
        t = s.table()
        if t not in where:
            where[t] = len(tables)
            tables.append(t)
            counts.append(0)
        counts[where[t]] += 1
        mapping.append(where[t])
    return UniqueTableIndex(tuple(tables), tuple(counts), tuple(mapping))


def log_group_sizes(exp: StratifiedExperiment) -> tuple[float, float]:
    """Natural logs of the within-strata and between-strata group orders."""
    log_within = sum(lgamma(c + 1) for s in exp.strata for c in s.table().as_tuple())
    index = build_index(exp)
    log_between = sum(lgamma(p + 1) for p in index.multiplicities)
    return log_within, log_between


class DesignType(str, enum.Enum):
    TYPE_I = "TypeI"  # per-stratum variables
    TYPE_II = "TypeII"  # per-class variables


@dataclass(frozen=True)
class SymmetryDiagnosis:
    design_type: DesignType
    per_stratum_variables: int
    per_class_variables: int
    log_within: float
    log_between: float

    @property
    def group_size_type(self) -> DesignType:
        """Classification by comparing group orders directly (ties toward Type I)."""
        if self.log_within >= self.log_between:
            return DesignType.TYPE_I
        return DesignType.TYPE_II

    @property
    def criteria_agree(self) -> bool:
        return self.group_size_type is self.design_type


def diagnose(exp: StratifiedExperiment) -> SymmetryDiagnosis:
    index = build_index(exp)
    per_stratum = 4 * exp.I
    per_class = sum(index.delta_counts())
    kind = DesignType.TYPE_I if per_stratum <= per_class else DesignType.TYPE_II
    lw, lb = log_group_sizes(exp)
    return SymmetryDiagnosis(kind, per_stratum, per_class, lw, lb)


def classify_design(exp: StratifiedExperiment) -> DesignType:
    """Pick the formulation family with fewer decision variables."""
    return diagnose(exp).design_type
