"""Batch verification suites driven by the ``oracle-check`` command."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import ContrastSpec
from ..errors import ConfigError
from .generators import generate_compliant_distribution, random_refinement_pair
from .identities import (
    check_deletion_identity,
    check_inverse_propensity_projection,
    check_supplementation_identity,
)
from .quadrature import si_gradient_check
from .symmetric import SymmetricExampleSpec, symmetric_example_check

SUITES = ("lemma1", "lemma2", "projection", "symmetric", "si-gradient")
TOLERANCES = {
    "lemma1": 1e-10,
    "lemma2": 1e-10,
    "projection": 1e-12,
    "symmetric": 1e-12,
    "si-gradient": 1e-3,
}


@dataclass
class SuiteResult:
    suite: str
    trials: int
    max_discrepancy: float
    tolerance: float
    passed: bool
    seconds: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def random_contrast(K: int, seed: int) -> ContrastSpec:
    """Random nonzero coefficients for ``K`` arms."""
    c = np.random.default_rng([seed, 7]).normal(size=K)
    return ContrastSpec({k: float(v) for k, v in enumerate(c)})


def _seeds(trials: int, seed: int) -> list:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(trials)]


def run_lemma1(trials: int, seed: int) -> SuiteResult:
    t0 = time.perf_counter()
    worst = mu_worst = 0.0
    for s in _seeds(trials, seed):
        dist, Z1, Z2 = generate_compliant_distribution("ods_pair", seed=s)
        rep = check_deletion_identity(dist, Z1, Z2, random_contrast(dist.K, s))
        worst = max(worst, rep.max_abs_discrepancy)
        mu_worst = max(mu_worst, rep.mu_discrepancy)
    tol = TOLERANCES["lemma1"]
    return SuiteResult("lemma1", trials, worst, tol, worst < tol, time.perf_counter() - t0,
                       {"max_mu_discrepancy": mu_worst})


def run_lemma2(trials: int, seed: int) -> SuiteResult:
    t0 = time.perf_counter()
    parts = {"decomposition": 0.0, "variance": 0.0, "covariance": 0.0}
    mu_worst = 0.0
    for s in _seeds(trials, seed):
        dist, Z1, Z2 = generate_compliant_distribution("precision_pair", seed=s)
        rep = check_supplementation_identity(dist, Z1, Z2, random_contrast(dist.K, s))
        parts["decomposition"] = max(parts["decomposition"], rep.decomposition_discrepancy)
        parts["variance"] = max(parts["variance"], rep.variance_discrepancy)
        parts["covariance"] = max(parts["covariance"], rep.covariance_discrepancy)
        mu_worst = max(mu_worst, rep.mu_discrepancy)
    worst = max(parts.values())
    tol = TOLERANCES["lemma2"]
    return SuiteResult("lemma2", trials, worst, tol, worst < tol, time.perf_counter() - t0,
                       {**{f"max_{k}_discrepancy": v for k, v in parts.items()}, "max_mu_discrepancy": mu_worst})


def run_projection(trials: int, seed: int) -> SuiteResult:
    t0 = time.perf_counter()
    worst = 0.0
    for s in _seeds(trials, seed):
        dist, Z1, Z2 = random_refinement_pair(s)
        for t in range(dist.K):
            worst = max(worst, check_inverse_propensity_projection(dist, Z1, Z2, t))
    tol = TOLERANCES["projection"]
    return SuiteResult("projection", trials, worst, tol, worst < tol, time.perf_counter() - t0)


def run_symmetric(trials: int = 1, seed: int = 0, delta: float = 0.1, grid_size: int = 101) -> SuiteResult:
    """Closed forms at ``delta`` plus the small-delta ordering at 0.01.

    ``passed`` requires every ``V`` row (stated and general forms) to match
    and the reversal to hold.
    """
    t0 = time.perf_counter()
    rows = symmetric_example_check(SymmetricExampleSpec(delta=delta, grid_size=grid_size))
    v_rows = [r for r in rows if r.quantity.startswith("V(")]
    worst = max(r.abs_error for r in v_rows)
    small = {r.quantity: r.exact_value for r in symmetric_example_check(SymmetricExampleSpec(delta=0.01))}
    reversal = small["V(Z)"] > small["V(W)"]
    tol = TOLERANCES["symmetric"]
    table = [{"quantity": r.quantity, "closed_form": r.closed_form, "exact_value": r.exact_value,
              "abs_error": r.abs_error} for r in rows]
    return SuiteResult("symmetric", 1, worst, tol, bool(worst < tol and reversal), time.perf_counter() - t0,
                       {"table": table, "reversal_at_delta_0.01": bool(reversal),
                        "V(Z)_delta_0.01": small["V(Z)"], "V(W)_delta_0.01": small["V(W)"]})


def run_si_gradient(trials: int = 1, seed: int = 0) -> SuiteResult:
    t0 = time.perf_counter()
    res = si_gradient_check()
    tol = TOLERANCES["si-gradient"]
    return SuiteResult("si-gradient", 1, res.rel_error, tol, res.rel_error < tol, time.perf_counter() - t0,
                       {"fd_gradient": res.richardson_gradient.tolist(),
                        "formula_gradient": res.formula_gradient.tolist()})


_RUNNERS = {
    "lemma1": run_lemma1,
    "lemma2": run_lemma2,
    "projection": run_projection,
    "symmetric": run_symmetric,
    "si-gradient": run_si_gradient,
}


def run_suites(suite: str, trials: int, seed: int) -> list:
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    names = SUITES if suite == "all" else (suite,)
    for name in names:
        if name not in _RUNNERS:
            raise ConfigError(f"unknown suite {name!r}")
    return [_RUNNERS[name](trials, seed) for name in names]
