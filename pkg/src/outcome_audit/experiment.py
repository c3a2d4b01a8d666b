"""Stratified experiments with binary outcomes.

Subjects are ordered stratum by stratum (strata in first-appearance order,
subjects in row order within a stratum).  Every outcome vector handled by the
package is aligned to that ordering.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, TextIO

HEADER = ("stratum", "treated", "outcome")


class ExperimentError(ValueError):
    """Raised for malformed input or an invalid experiment."""


@dataclass(frozen=True)
class SubjectRecord:
    stratum_id: str
    subject_index: int
    treated: int
    measured_outcome: int
    row: int | None = None


@dataclass(frozen=True)
class StratumTable:
    """Measured 2x2 table of one stratum, keyed by (arm, measured outcome)."""

    c00: int  # control, negative
    c01: int  # control, positive
    c10: int  # treated, negative
    c11: int  # treated, positive

    @property
    def n(self) -> int:
        return self.c00 + self.c01 + self.c10 + self.c11

    @property
    def m(self) -> int:
        return self.c10 + self.c11

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.c00, self.c01, self.c10, self.c11)


@dataclass(frozen=True)
class Stratum:
    label: str
    treated: tuple[int, ...]
    outcome: tuple[int, ...]
    rows: tuple[int, ...] | None = None

    @property
    def n(self) -> int:
        return len(self.treated)

    @property
    def m(self) -> int:
        return sum(self.treated)

    def table(self) -> StratumTable:
        c = [0, 0, 0, 0]
        for z, y in zip(self.treated, self.outcome):
            c[2 * z + y] += 1
        return StratumTable(*c)


@dataclass(frozen=True)
class StratifiedExperiment:
    strata: tuple[Stratum, ...]

    def __post_init__(self):
        if not self.strata:
            raise ExperimentError("experiment has no strata")
        seen = set()
        for s in self.strata:
            if s.label in seen:
                raise ExperimentError(f"duplicate stratum label {s.label!r}")
            seen.add(s.label)
            if len(s.treated) != len(s.outcome):
                raise ExperimentError(f"stratum {s.label!r}: treated/outcome length mismatch")
            for v in s.treated + s.outcome:
                if v not in (0, 1):
                    raise ExperimentError(f"stratum {s.label!r}: non-binary value {v!r}")
            if not 1 <= s.m <= s.n - 1:
                raise ExperimentError(
                    f"degenerate stratum {s.label!r}: {s.m} treated of {s.n} "
                    "(both arms must be nonempty)"
                )

    @classmethod
    def from_vectors(
        cls,
        treated: Sequence[Sequence[int]],
        outcome: Sequence[Sequence[int]],
        labels: Sequence[str] | None = None,
    ) -> "StratifiedExperiment":
        """Build from per-stratum treatment and outcome vectors."""
        if len(treated) != len(outcome):
            raise ExperimentError("treated and outcome must have the same number of strata")
        if labels is None:
            labels = [f"s{i + 1}" for i in range(len(treated))]
        return cls(
            tuple(
                Stratum(str(lab), tuple(int(v) for v in z), tuple(int(v) for v in y))
                for lab, z, y in zip(labels, treated, outcome)
            )
        )

    @property
    def I(self) -> int:  # noqa: E743 - conventional symbol for the stratum count
        return len(self.strata)

    @property
    def N(self) -> int:
        return sum(s.n for s in self.strata)

    @property
    def sizes(self) -> list[int]:
        return [s.n for s in self.strata]

    @property
    def treated_counts(self) -> list[int]:
        return [s.m for s in self.strata]

    @property
    def treated(self) -> tuple[int, ...]:
        return tuple(z for s in self.strata for z in s.treated)

    @property
    def outcome(self) -> tuple[int, ...]:
        return tuple(y for s in self.strata for y in s.outcome)

    def offsets(self) -> list[int]:
        """Start position of each stratum in the flat subject ordering."""
        out, pos = [], 0
        for s in self.strata:
            out.append(pos)
            pos += s.n
        return out

    def split(self, y: Sequence[int]) -> list[tuple[int, ...]]:
        """Cut a flat outcome vector into per-stratum pieces."""
        check_outcome_vector(y, self.N)
        pieces, pos = [], 0
        for s in self.strata:
            pieces.append(tuple(y[pos:pos + s.n]))
            pos += s.n
        return pieces

    def with_outcome(self, y: Sequence[int]) -> "StratifiedExperiment":
        """Same design with the outcome vector replaced."""
        pieces = self.split(y)
        return StratifiedExperiment(
            tuple(
                Stratum(s.label, s.treated, tuple(int(v) for v in piece), s.rows)
                for s, piece in zip(self.strata, pieces)
            )
        )

    def subjects(self) -> list[SubjectRecord]:
        out = []
        for s in self.strata:
            rows = s.rows or (None,) * s.n
            for j, (z, y, r) in enumerate(zip(s.treated, s.outcome, rows)):
                out.append(SubjectRecord(s.label, j, z, y, r))
        return out


def check_outcome_vector(y: Sequence[int], n: int) -> None:
    if len(y) != n:
        raise ValueError(f"outcome vector has length {len(y)}, expected {n}")


def load_experiment(source: TextIO | str, require_outcome: bool = True) -> StratifiedExperiment:
    """Parse ``stratum,treated,outcome`` CSV text into an experiment.

    ``source`` is an open text stream or a string holding the CSV text.
    Blank lines are ignored.  Strata keep their first-appearance order and
    subjects keep their row order.  With ``require_outcome=False`` a
    ``stratum,treated`` header is also accepted and outcomes default to 0.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    header = None
    order: list[str] = []
    data: dict[str, tuple[list[int], list[int], list[int]]] = {}
    data_row = 0
    for line_no, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if header is None:
            header = tuple(cells)
            if header != HEADER and (require_outcome or header != HEADER[:2]):
                raise ExperimentError(
                    f"line {line_no}: expected header {','.join(HEADER)!r}, got {','.join(cells)!r}"
                )
            continue
        data_row += 1
        if len(cells) != len(header):
            raise ExperimentError(
                f"row {data_row} (line {line_no}): expected {len(header)} fields, got {len(cells)}"
            )
        label = cells[0]
        if not label:
            raise ExperimentError(f"row {data_row} (line {line_no}): empty stratum label")
        try:
            values = [_parse_binary(c) for c in cells[1:]]
        except ValueError:
            raise ExperimentError(
                f"row {data_row} (line {line_no}): treated/outcome must be 0 or 1, got {cells[1:]!r}"
            ) from None
        z = values[0]
        y = values[1] if len(values) > 1 else 0
        if label not in data:
            order.append(label)
            data[label] = ([], [], [])
        data[label][0].append(z)
        data[label][1].append(y)
        data[label][2].append(data_row)
    if header is None or not order:
        raise ExperimentError("empty input: no subject rows")
    return StratifiedExperiment(
        tuple(
            Stratum(lab, tuple(data[lab][0]), tuple(data[lab][1]), tuple(data[lab][2]))
            for lab in order
        )
    )


def _parse_binary(cell: str) -> int:
    if cell not in ("0", "1"):
        raise ValueError(cell)
    return int(cell)


def dump_experiment(exp: StratifiedExperiment) -> str:
    """Render an experiment back to CSV text (stratum by stratum)."""
    buf = io.StringIO()
    buf.write(",".join(HEADER) + "\n")
    for s in exp.strata:
        for z, y in zip(s.treated, s.outcome):
            buf.write(f"{s.label},{z},{y}\n")
    return buf.getvalue()


def stratum_tables(exp: StratifiedExperiment) -> list[StratumTable]:
    return [s.table() for s in exp.strata]


def accuracy(y_star: Sequence[int], y: Sequence[int]) -> Fraction:
    """Share of positions where the two binary vectors agree."""
    if len(y_star) != len(y):
        raise ValueError(f"length mismatch: {len(y_star)} vs {len(y)}")
    if not y:
        raise ValueError("empty outcome vectors")
    agree = sum(1 for a, b in zip(y_star, y) if a == b)
    return Fraction(agree, len(y))


def alteration_count(y_star: Sequence[int], y: Sequence[int]) -> int:
    """Hamming distance between two binary vectors."""
    if len(y_star) != len(y):
        raise ValueError(f"length mismatch: {len(y_star)} vs {len(y)}")
    return sum(1 for a, b in zip(y_star, y) if a != b)


def example1() -> StratifiedExperiment:
    """One treated subject and 1000 controls; only the treated subject is positive."""
    n = 1001
    z = [1] + [0] * (n - 1)
    return StratifiedExperiment.from_vectors([z], [list(z)], labels=["s1"])


def example2(study: int) -> StratifiedExperiment:
    """The two three-stratum toy studies with 17 subjects each."""
    if study == 1:
        z = [[1, 0, 1], [0, 0, 1, 0, 0, 0], [0, 0, 0, 1, 0, 0, 0, 0]]
        y = [[1, 0, 1], [0, 0, 1, 0, 0, 0], [0, 0, 0, 1, 0, 0, 0, 0]]
    elif study == 2:
        z = [[1, 0, 0, 0, 0, 0, 0], [1, 1, 0, 1, 0], [0, 0, 1, 1, 0]]
        y = [[0, 0, 0, 0, 0, 0, 0], [1, 1, 0, 1, 0], [0, 0, 1, 1, 0]]
    else:
        raise ValueError("study must be 1 or 2")
    return StratifiedExperiment.from_vectors(z, y, labels=["1", "2", "3"])


def flatten(pieces: Iterable[Sequence[int]]) -> tuple[int, ...]:
    return tuple(v for piece in pieces for v in piece)
