"""Point estimators of adjusted means and contrasts.

All estimators return a :class:`PointEstimate` whose ``value`` is the mean of
its ``per_row_terms``; for the AIPW family these terms are the estimated
uncentred influence values used by :func:`dope.inference.influence_variance`.
A *target* is either a single arm (label or id) or a :class:`ContrastSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Union

import numpy as np

from .data import ContrastSpec, ObservationTable, assign_folds, strata
from .errors import (
    BadFoldConfig,
    ConfigError,
    EmptyIndexSet,
    MissingArmEstimate,
    NonBinaryTreatment,
    OverlappingIndexSets,
)
from .inference import influence_variance
from .regressors.models import (
    ArmProjectionHead,
    RegressionConfig,
    fit_outcome,
    fit_propensity,
)


@dataclass(frozen=True)
class ClipRange:
    lo: float = 0.01
    hi: float = 0.99

    def __post_init__(self):
        if not 0.0 < self.lo < self.hi < 1.0:
            raise ConfigError("clip range must satisfy 0 < lo < hi < 1")

    def apply(self, p) -> np.ndarray:
        return np.clip(np.asarray(p, dtype=float), self.lo, self.hi)


DEFAULT_CLIP = ClipRange()


@dataclass(frozen=True)
class IndexSets:
    """Row subsets used for the representation fit (I1), the nuisance refits
    (I2) and the final average (I3)."""

    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray

    def __post_init__(self):
        for name in ("I1", "I2", "I3"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).ravel()
            if arr.size == 0:
                raise EmptyIndexSet(f"{name} is empty")
            object.__setattr__(self, name, arr)

    @classmethod
    def full(cls, n: int) -> "IndexSets":
        rows = np.arange(n)
        return cls(rows, rows, rows)

    @property
    def fused(self) -> bool:
        """True when I1 and I2 are the same set of rows."""
        return np.array_equal(np.unique(self.I1), np.unique(self.I2))

    def validate(self, n: int, strict: bool = False) -> None:
        for name in ("I1", "I2", "I3"):
            arr = getattr(self, name)
            if arr.min() < 0 or arr.max() >= n:
                raise ConfigError(f"{name} has indices outside 0..{n - 1}")
        if not strict:
            return
        sets = [np.unique(a) for a in (self.I1, self.I2, self.I3)]
        if sum(s.size for s in sets) != sum(a.size for a in (self.I1, self.I2, self.I3)):
            raise OverlappingIndexSets("index sets contain repeated rows")
        joined = np.concatenate(sets)
        if np.unique(joined).size != joined.size:
            raise OverlappingIndexSets("index sets must be pairwise disjoint in strict mode")
        if joined.size != n:
            raise OverlappingIndexSets("index sets must cover every row in strict mode")


@dataclass(frozen=True)
class PointEstimate:
    value: float
    per_row_terms: np.ndarray
    method: str
    index_sets: Optional[IndexSets] = None
    representation_dim: Optional[int] = None
    arm_values: Dict[int, float] = field(default_factory=dict)

    def variance(self):
        return influence_variance(self.per_row_terms)


@dataclass(frozen=True)
class NuisancePair:
    """Representation map with the outcome and propensity models built on it.

    ``outcome.predict(t, X)`` receives the representation, or the raw
    covariates when ``outcome_on_covariates`` is set (the fused case, where
    the outcome network already contains the representation).
    ``propensity.probabilities(Z)`` returns unclipped per-arm probabilities.
    """

    representation: Callable
    outcome: object
    propensity: object
    outcome_on_covariates: bool = False

    def outcome_values(self, t: int, W) -> np.ndarray:
        X = W if self.outcome_on_covariates else self.representation(W)
        return np.asarray(self.outcome.predict(t, X), dtype=float)

    def propensity_values(self, W) -> np.ndarray:
        return np.asarray(self.propensity.probabilities(self.representation(W)), dtype=float)

    @property
    def representation_dim(self) -> Optional[int]:
        return getattr(self.outcome, "representation_dim", None)


def identity(W):
    return np.atleast_2d(np.asarray(W, dtype=float))


def _coefficients(table: ObservationTable, target) -> Dict[int, float]:
    if isinstance(target, ContrastSpec):
        target.validate(table.n_arms)
        return {k: v for k, v in target.coefficients.items() if v != 0.0}
    return {table.label_id(target): 1.0}


def _outcome_column(g, t: int, W) -> np.ndarray:
    if isinstance(g, np.ndarray):
        return np.asarray(g if g.ndim == 1 else g[:, t], dtype=float)
    return np.asarray(g.predict(t, W), dtype=float)


def _propensity_column(m, t: int, W) -> np.ndarray:
    if isinstance(m, np.ndarray):
        return np.asarray(m if m.ndim == 1 else m[:, t], dtype=float)
    return np.asarray(m.probabilities(W), dtype=float)[:, t]


def naive_contrast(table: ObservationTable, t1=1, t0=0) -> float:
    """Difference of the observed arm means."""
    return float(strata(table, t1).outcomes.mean() - strata(table, t0).outcomes.mean())


def regression_estimate(g, table: ObservationTable, target=1) -> PointEstimate:
    """Average of ``g(t, W_i)`` over all rows.

    ``g`` is an outcome model (``predict(t, W)``) or precomputed predictions,
    either a vector for a single arm or an ``(n, K)`` array.
    """
    coef = _coefficients(table, target)
    W = table.covariates
    terms = np.zeros(table.n)
    arms = {}
    for t, c in coef.items():
        col = _outcome_column(g, t, W)
        arms[t] = float(col.mean())
        terms += c * col
    return PointEstimate(float(terms.mean()), terms, "regression", arm_values=arms)


def ipw_estimate(m, table: ObservationTable, target=1, clip: ClipRange = DEFAULT_CLIP) -> PointEstimate:
    """Inverse-propensity weighting with clipped propensities."""
    coef = _coefficients(table, target)
    W, T, Y = table.covariates, table.treatments, table.outcomes
    terms = np.zeros(table.n)
    arms = {}
    for t, c in coef.items():
        col = (T == t) * Y / clip.apply(_propensity_column(m, t, W))
        arms[t] = float(col.mean())
        terms += c * col
    return PointEstimate(float(terms.mean()), terms, "ipw", arm_values=arms)


def aipw_terms(g_t, m_t, treated_mask, y) -> np.ndarray:
    """``g + 1(T=t) (Y - g) / m`` per row, with ``m`` already clipped."""
    return g_t + treated_mask * (y - g_t) / m_t


def aipw_estimate(m, g, table: ObservationTable, target=1, clip: ClipRange = DEFAULT_CLIP,
                  method: str = "aipw") -> PointEstimate:
    """Augmented IPW estimate.

    ``m`` and ``g`` are fitted models (``probabilities(W)``, ``predict(t, W)``)
    or arrays of their values on the rows of ``table``.
    """
    coef = _coefficients(table, target)
    W, T, Y = table.covariates, table.treatments, table.outcomes
    terms = np.zeros(table.n)
    arms = {}
    for t, c in coef.items():
        col = aipw_terms(_outcome_column(g, t, W), clip.apply(_propensity_column(m, t, W)), T == t, Y)
        arms[t] = float(col.mean())
        terms += c * col
    return PointEstimate(float(terms.mean()), terms, method, arm_values=arms)


def dope_from_nuisances(nuisances: NuisancePair, table: ObservationTable, target=1,
                        clip: ClipRange = DEFAULT_CLIP, rows=None, method: str = "dope",
                        index_sets: Optional[IndexSets] = None) -> PointEstimate:
    """AIPW over ``rows`` (all rows by default) with nuisances factoring
    through the representation."""
    sub = table if rows is None else table.take(rows)
    W = sub.covariates
    probs = nuisances.propensity_values(W)
    g = np.column_stack([nuisances.outcome_values(t, W) for t in range(table.n_arms)])
    est = aipw_estimate(probs, g, sub, target, clip, method)
    return PointEstimate(est.value, est.per_row_terms, method, index_sets,
                         nuisances.representation_dim, est.arm_values)


def dope_nuisances_from_outcome(outcome, table: ObservationTable, idx: IndexSets,
                                cfg: Optional[RegressionConfig] = None) -> NuisancePair:
    """Lines after the representation fit: compute the index on I2, refit the
    outcome head there (unless I1 and I2 coincide) and fit the propensity.

    With ``I1 == I2`` the fitted outcome model itself is the head, so ``cfg``
    is only needed when the sets differ.
    """
    part = table.take(idx.I2)
    Z = outcome.representation(part.covariates)
    propensity = fit_propensity(Z, part.treatments, table.n_arms)
    if idx.fused:
        return NuisancePair(outcome.representation, outcome, propensity, outcome_on_covariates=True)
    if cfg is None:
        raise ConfigError("refitting the outcome head needs a regression config")
    head = fit_outcome(part.with_covariates(Z, tuple(f"z{j + 1}" for j in range(Z.shape[1]))), cfg)
    return NuisancePair(outcome.representation, head, propensity)


def fit_dope_nuisances(table: ObservationTable, idx: IndexSets, cfg: RegressionConfig) -> NuisancePair:
    outcome = fit_outcome(table.take(idx.I1), cfg)
    return dope_nuisances_from_outcome(outcome, table, idx, cfg)


def dope(table: ObservationTable, idx: Optional[IndexSets] = None, regression_cfg: RegressionConfig = None,
         clip: ClipRange = DEFAULT_CLIP, target=1, strict: bool = False) -> PointEstimate:
    """Debiased outcome-adapted propensity estimator with an index representation.

    1. Fit the outcome regression on I1; its index map is the representation.
    2. Compute the representation on I2; refit the outcome head on
       ``(T, Z)`` there and fit a logistic propensity of ``T`` on ``Z``.
    3. Average the AIPW terms over I3.

    When I1 and I2 hold the same rows the outcome fit from step 1 is used as
    the head directly.
    """
    if regression_cfg is None:
        raise ConfigError("dope needs a regression config")
    idx = IndexSets.full(table.n) if idx is None else idx
    idx.validate(table.n, strict)
    nuis = fit_dope_nuisances(table, idx, regression_cfg)
    return dope_from_nuisances(nuis, table, target, clip, idx.I3, "dope-idx", idx)


def bcl_nuisances_from_outcome(outcome, table: ObservationTable, idx: IndexSets) -> NuisancePair:
    """Representation ``(g(0, w), g(1, w))`` with head ``h(t, z) = z_t``."""
    if table.n_arms != 2:
        raise NonBinaryTreatment(f"outcome-prediction representation needs 2 arms, got {table.n_arms}")

    def representation(W):
        return np.column_stack([outcome.predict(0, W), outcome.predict(1, W)])

    part = table.take(idx.I2)
    propensity = fit_propensity(representation(part.covariates), part.treatments, 2)
    return NuisancePair(representation, ArmProjectionHead(2), propensity)


def dope_bcl(table: ObservationTable, idx: Optional[IndexSets] = None, regression_cfg: RegressionConfig = None,
             clip: ClipRange = DEFAULT_CLIP, target=1, strict: bool = False) -> PointEstimate:
    """DOPE with the outcome predictions of both arms as the representation."""
    if table.n_arms != 2:
        raise NonBinaryTreatment(f"outcome-prediction representation needs 2 arms, got {table.n_arms}")
    if regression_cfg is None:
        raise ConfigError("dope_bcl needs a regression config")
    idx = IndexSets.full(table.n) if idx is None else idx
    idx.validate(table.n, strict)
    outcome = fit_outcome(table.take(idx.I1), regression_cfg)
    nuis = bcl_nuisances_from_outcome(outcome, table, idx)
    return dope_from_nuisances(nuis, table, target, clip, idx.I3, "dope-bcl", idx)


@dataclass(frozen=True)
class CrossFitResult:
    estimate: float
    variance: float
    n_effective: int
    fold_estimates: np.ndarray
    fold_variances: np.ndarray
    layouts: tuple


def crossfit_layouts(fold_of: np.ndarray, K: int, m: int = 1, variant: str = "cycle") -> list:
    """Index sets for every fold.

    ``cycle``: I3 = J_k, I1 = J_{k+1} u ... u J_{k+m} (indices mod K), I2 =
    the remaining folds.  ``three_fold``: I3 = J_k and I1 = I2 = all other
    rows.
    """
    folds = [np.flatnonzero(fold_of == k) for k in range(K)]
    out = []
    for k in range(K):
        rest = np.flatnonzero(fold_of != k)
        if variant == "three_fold":
            out.append(IndexSets(rest, rest, folds[k]))
            continue
        first = {(k + l) % K for l in range(1, m + 1)}
        I1 = np.sort(np.concatenate([folds[j] for j in sorted(first)]))
        I2 = np.sort(np.concatenate([folds[j] for j in range(K) if j != k and j not in first]))
        out.append(IndexSets(I1, I2, folds[k]))
    return out


def crossfit_dope(table: ObservationTable, K: int, m: int = 1, regression_cfg: RegressionConfig = None,
                  clip: ClipRange = DEFAULT_CLIP, seed: int = 0, target=1, variant: str = "cycle",
                  representation: str = "index", strict: bool = True) -> CrossFitResult:
    """Cross-fitted DOPE.

    Returns the mean of the fold estimates and the mean of the fold variance
    estimates.  The variance refers to the full sample, so ``n_effective``
    is ``table.n``.
    """
    if regression_cfg is None:
        raise ConfigError("crossfit_dope needs a regression config")
    if variant not in ("cycle", "three_fold"):
        raise ConfigError(f"unknown cross-fitting variant {variant!r}")
    if variant == "cycle" and not 1 <= m <= K - 2:
        if strict or m < 1:
            raise BadFoldConfig(f"need 1 <= m <= K - 2, got m={m}, K={K}")
        m = min(m, K - 1)
    if representation not in ("index", "outcome"):
        raise ConfigError(f"unknown representation {representation!r}")
    folds = assign_folds(table.n, K, seed)
    layouts = crossfit_layouts(folds.fold_of, K, m, variant)
    estimates, variances = [], []
    for k, idx in enumerate(layouts):
        cfg_k = regression_cfg.with_seed(int(np.random.SeedSequence(seed, spawn_key=(k,)).generate_state(1)[0]))
        outcome = fit_outcome(table.take(idx.I1), cfg_k)
        if representation == "index":
            nuis = dope_nuisances_from_outcome(outcome, table, idx, cfg_k)
        else:
            nuis = bcl_nuisances_from_outcome(outcome, table, idx)
        est = dope_from_nuisances(nuis, table, target, clip, idx.I3, "crossfit-dope", idx)
        estimates.append(est.value)
        variances.append(est.variance().v_hat)
    return CrossFitResult(float(np.mean(estimates)), float(np.mean(variances)), table.n,
                          np.array(estimates), np.array(variances), tuple(layouts))


def adjusted_contrast(estimates, spec: ContrastSpec) -> float:
    """``sum_t c_t mu_t`` from per-arm estimates (floats or PointEstimates)."""
    total = 0.0
    for t, c in spec.coefficients.items():
        if c == 0.0:
            continue
        if t not in estimates:
            raise MissingArmEstimate(f"no estimate for arm {t}")
        e = estimates[t]
        total += c * float(e.value if isinstance(e, PointEstimate) else e)
    return total
