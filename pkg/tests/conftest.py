import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from outcome_audit.experiment import StratifiedExperiment
from outcome_audit.inference import NullSpec

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"


@st.composite
def experiments(draw, max_strata=3, max_size=6, min_arm=1, max_total=12):
    """Small stratified experiments with random assignments and outcomes."""
    strata = draw(st.integers(1, max_strata))
    treated, outcome = [], []
    total = 0
    for _ in range(strata):
        n = draw(st.integers(2 * min_arm, max_size))
        if treated and total + n > max_total:
            break
        m = draw(st.integers(min_arm, n - min_arm))
        z = draw(st.permutations([1] * m + [0] * (n - m)))
        y = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
        treated.append(list(z))
        outcome.append(y)
        total += n
    return StratifiedExperiment.from_vectors(treated, outcome)


def frozen_cases():
    cases = json.loads((FIXTURES / "frozen_oracle.json").read_text())
    out = []
    for c in cases:
        exp = StratifiedExperiment.from_vectors(c["treated"], c["outcome"])
        spec = NullSpec(c["null"], Fraction(c["alpha"]), c["method"], c["sided"])
        out.append((exp, spec, c))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, tolerance: str, detail: str = "") -> None:
    """Remember one acceptance line; printed in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} (tolerance: {tolerance})"
    if detail:
        line += f" -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
