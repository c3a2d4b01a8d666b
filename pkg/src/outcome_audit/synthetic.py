"""Seeded synthetic experiments for tests, benchmarks and demos."""

from __future__ import annotations

import numpy as np

from .experiment import StratifiedExperiment


def random_experiment(
    rng: np.random.Generator,
    max_strata: int = 4,
    size_range: tuple[int, int] = (2, 6),
    max_total: int = 14,
    min_arm: int = 1,
    prevalence: float | None = None,
) -> StratifiedExperiment:
    """Small random stratified experiment.

    Strata are added until ``max_strata`` or until the next one would push
    the total past ``max_total``.  Each stratum has at least ``min_arm``
    subjects per arm.  Outcomes are Bernoulli with a per-experiment
    prevalence drawn uniformly unless ``prevalence`` is given.
    """
    lo = max(size_range[0], 2 * min_arm)
    hi = size_range[1]
    p = rng.uniform(0.05, 0.95) if prevalence is None else prevalence
    treated, outcome = [], []
    total = 0
    for _ in range(int(rng.integers(1, max_strata + 1))):
        n = int(rng.integers(lo, hi + 1))
        if total + n > max_total:
            break
        m = int(rng.integers(min_arm, n - min_arm + 1))
        z = np.zeros(n, dtype=int)
        z[rng.permutation(n)[:m]] = 1
        treated.append(z.tolist())
        outcome.append((rng.random(n) < p).astype(int).tolist())
        total += n
    if not treated:
        n = lo
        z = [1] * min_arm + [0] * (n - min_arm)
        treated.append(z)
        outcome.append((rng.random(n) < p).astype(int).tolist())
    return StratifiedExperiment.from_vectors(treated, outcome)


def large_trial_experiment(
    seed: int = 2003,
    strata: int = 221,
    size_range: tuple[int, int] = (36, 46),
    treated_rate: float = 0.184,
    control_rate: float = 0.244,
) -> StratifiedExperiment:
    """Multi-site trial shaped like a large prevention study.

    About 9000 subjects in 221 sites of roughly 41, half treated, with
    outcome rates matching a relative risk near 0.75.
    """
    rng = np.random.default_rng(seed)
    treated, outcome = [], []
    for _ in range(strata):
        n = int(rng.integers(size_range[0], size_range[1] + 1))
        m = n // 2 + int(rng.integers(0, 2)) * (n % 2)
        z = np.zeros(n, dtype=int)
        z[:m] = 1
        rates = np.where(z == 1, treated_rate, control_rate)
        treated.append(z.tolist())
        outcome.append((rng.random(n) < rates).astype(int).tolist())
    return StratifiedExperiment.from_vectors(treated, outcome)
