"""Influence-function variance, Wald intervals and the nonparametric bootstrap."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .data import ObservationTable
from .errors import BootstrapFailure, ConfigError, DopeError, TooFewRows

KINDS = ("wald_asymptotic", "bootstrap_normal", "bootstrap_percentile")
FAILURE_TOLERANCE = 0.02


@dataclass(frozen=True)
class VarianceEstimate:
    v_hat: float
    n_effective: int

    def __post_init__(self):
        if not self.v_hat >= 0.0:
            raise ValueError("variance estimate must be nonnegative")

    @property
    def se(self) -> float:
        return float(np.sqrt(self.v_hat / self.n_effective))


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    level: float
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown interval kind {self.kind!r}")
        if not self.lo <= self.hi:
            raise ValueError("interval bounds out of order")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate estimates of a bootstrap run.

    ``replicate_values`` holds the successful replicates in replicate order
    (shape ``(B_ok,)`` or ``(B_ok, k)`` for vector-valued estimators) and
    ``failed`` the indices of replicates whose estimator raised.
    """

    replicate_values: np.ndarray
    se: np.ndarray
    seed: int
    B: int
    failed: tuple = ()


def influence_variance(per_row_terms, n_effective: Optional[int] = None) -> VarianceEstimate:
    """``mean(u^2) - mean(u)^2`` over the evaluation rows.

    Computed as the mean squared deviation from the mean, which is the same
    quantity without the cancellation of the raw-moment form.
    """
    u = np.asarray(per_row_terms, dtype=float).ravel()
    if u.size < 2:
        raise TooFewRows("variance estimate needs at least two terms")
    v = float(np.mean((u - u.mean()) ** 2))
    return VarianceEstimate(v, u.size if n_effective is None else int(n_effective))


def normal_quantile(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ConfigError("level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2.0))


def wald_interval(estimate: float, v: VarianceEstimate, level: float = 0.95) -> Interval:
    half = normal_quantile(level) * np.sqrt(v.v_hat / v.n_effective)
    return Interval(estimate - half, estimate + half, level, "wald_asymptotic")


def replicate_seed(seed: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(r),))


def _one_replicate(table, closure, seed, r):
    ss = replicate_seed(seed, r)
    rows_rng, fit_ss = (np.random.default_rng(s) for s in ss.spawn(2))
    rows = rows_rng.integers(0, table.n, size=table.n)
    child_seed = int(fit_ss.integers(0, 2**31 - 1))
    try:
        return np.asarray(closure(table.take(rows), child_seed), dtype=float)
    except (DopeError, np.linalg.LinAlgError):
        return None


def bootstrap(table: ObservationTable, estimator_closure: Callable, B: int, seed: int,
              n_jobs: int = 1) -> BootstrapResult:
    """Nonparametric bootstrap with full refitting.

    Parameters
    ----------
    table : ObservationTable
    estimator_closure : callable
        ``estimator_closure(resampled_table, child_seed)`` returning a float
        or a vector.  It must refit every nuisance model it uses.
    B : int
        Number of resamples (at least 2).
    seed : int
        Replicate ``r`` draws its rows and its ``child_seed`` from a seed
        sequence keyed on ``(seed, r)``, so results do not depend on
        ``n_jobs``.
    n_jobs : int
        Worker processes; results are collected in replicate order.

    Replicates whose closure raises a package error are dropped.  Fewer than
    2% failures issue a warning; more raise :class:`BootstrapFailure`.
    """
    if B < 2:
        raise ConfigError("bootstrap needs B >= 2")
    if n_jobs == 1:
        outs = [_one_replicate(table, estimator_closure, seed, r) for r in range(B)]
    else:
        from joblib import Parallel, delayed

        outs = Parallel(n_jobs=n_jobs)(
            delayed(_one_replicate)(table, estimator_closure, seed, r) for r in range(B)
        )
    failed = tuple(r for r, o in enumerate(outs) if o is None)
    if failed:
        if len(failed) >= FAILURE_TOLERANCE * B:
            raise BootstrapFailure(f"{len(failed)} of {B} bootstrap replicates failed")
        warnings.warn(f"{len(failed)} of {B} bootstrap replicates failed and were excluded")
    values = np.array([o for o in outs if o is not None])
    if values.shape[0] < 2:
        raise BootstrapFailure("fewer than two successful bootstrap replicates")
    se = np.std(values, axis=0, ddof=1)
    return BootstrapResult(values, se, int(seed), int(B), failed)


def bootstrap_interval(estimate: float, result: BootstrapResult, level: float = 0.95,
                       kind: str = "bootstrap_percentile", component: Optional[int] = None) -> Interval:
    """Normal (``estimate +- z se``) or percentile bootstrap interval.

    Percentile bounds are the ``(1 -+ level)/2`` quantiles of the replicates
    with linear interpolation between order statistics.  ``component``
    selects one coordinate of a vector-valued bootstrap.
    """
    values = result.replicate_values
    se = result.se
    if component is not None:
        values = values[:, component]
        se = se[component]
    elif values.ndim != 1:
        raise ConfigError("vector-valued bootstrap needs a component index")
    if kind == "bootstrap_normal":
        half = normal_quantile(level) * float(se)
        return Interval(estimate - half, estimate + half, level, kind)
    if kind == "bootstrap_percentile":
        a = (1.0 - level) / 2.0
        lo, hi = np.quantile(values, [a, 1.0 - a], method="linear")
        return Interval(float(lo), float(hi), level, kind)
    raise ConfigError(f"unknown bootstrap interval kind {kind!r}")
