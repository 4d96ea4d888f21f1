"""Fitted nuisance models shared by the estimators.

Outcome models expose ``predict(t, W)`` and a representation map
``representation(W)``; propensity models expose ``probabilities(Z)``
returning one column per treatment arm, before clipping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Protocol, Union

import numpy as np

from ..data import ObservationTable, strata
from ..errors import ConfigError, DimensionMismatch
from .linear import LinearModel, fit_ols
from .logistic import LogisticModel, fit_logistic_irls
from .network import SingleIndexNet, TrainConfig, train_network


class OutcomeModel(Protocol):
    n_arms: int

    def predict(self, t: int, W) -> np.ndarray: ...

    def representation(self, W) -> np.ndarray: ...

    @property
    def representation_dim(self) -> int: ...


@dataclass(frozen=True)
class OLSConfig:
    """Linear outcome regression; ``mode`` as in :class:`TrainConfig`."""

    mode: str = "stratified"

    def __post_init__(self):
        if self.mode not in ("stratified", "joint"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def with_seed(self, seed: int) -> "OLSConfig":
        return self


RegressionConfig = Union[TrainConfig, OLSConfig]


@dataclass(frozen=True)
class LinearOutcome:
    """OLS outcome regression.

    Stratified: one fit per arm, representation ``(b_0^T w, ..., b_{K-1}^T w)``.
    Joint: ``Y ~ t + w`` with the arm id entering linearly, representation
    ``b^T w``.
    """

    mode: str
    fits: Dict[int, LinearModel]
    n_arms: int

    def predict(self, t: int, W) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if self.mode == "stratified":
            return self.fits[int(t)].predict(W)
        m = self.fits[0]
        return m.intercept + m.coefficients[0] * float(t) + W @ m.coefficients[1:]

    def representation(self, W) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if self.mode == "stratified":
            return np.column_stack([W @ self.fits[k].coefficients for k in range(self.n_arms)])
        return (W @ self.fits[0].coefficients[1:])[:, None]

    @property
    def representation_dim(self) -> int:
        return self.n_arms if self.mode == "stratified" else 1


@dataclass(frozen=True)
class SingleIndexOutcome:
    """Bottleneck-network outcome regression.

    Stratified: one network per arm, representation is the per-arm index
    pair ``(theta_0^T w, ..., theta_{K-1}^T w)``.  Joint: one network on
    ``alpha t + theta^T w``, representation ``theta^T w``.
    """

    mode: str
    nets: Dict[int, SingleIndexNet]
    n_arms: int

    def predict(self, t: int, W) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if self.mode == "stratified":
            return self.nets[int(t)].predict(W)
        return self.nets[0].predict(W, np.full(W.shape[0], float(t)))

    def representation(self, W) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if self.mode == "stratified":
            return np.column_stack([W @ self.nets[k].theta for k in range(self.n_arms)])
        return (W @ self.nets[0].theta)[:, None]

    @property
    def representation_dim(self) -> int:
        return self.n_arms if self.mode == "stratified" else 1


@dataclass(frozen=True)
class ArmProjectionHead:
    """Outcome head ``h(t, z) = z_t`` used when the representation already
    holds the per-arm outcome predictions."""

    n_arms: int

    def predict(self, t: int, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.n_arms:
            raise DimensionMismatch("representation must have one column per arm")
        return Z[:, int(t)].copy()

    def representation(self, Z) -> np.ndarray:
        return np.atleast_2d(np.asarray(Z, dtype=float))

    @property
    def representation_dim(self) -> int:
        return self.n_arms


@dataclass(frozen=True)
class LogisticPropensity:
    """Per-arm probabilities from logistic fits.

    Binary treatments use a single fit for arm 1 and its complement; more
    arms use one-vs-rest fits renormalised to sum to one.
    """

    fits: Dict[int, LogisticModel]
    n_arms: int

    def probabilities(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.n_arms == 2:
            p1 = self.fits[1].predict_proba(Z)
            return np.column_stack([1.0 - p1, p1])
        P = np.column_stack([self.fits[k].predict_proba(Z) for k in range(self.n_arms)])
        return P / P.sum(axis=1, keepdims=True)


def fit_propensity(features, treatments, n_arms: int) -> LogisticPropensity:
    Z = np.atleast_2d(np.asarray(features, dtype=float))
    if Z.shape[0] != np.shape(treatments)[0]:
        Z = Z.T
    t = np.asarray(treatments)
    if n_arms < 2:
        raise ConfigError("propensity models need at least two arms")
    arms = (1,) if n_arms == 2 else range(n_arms)
    fits = {k: fit_logistic_irls(Z, (t == k).astype(float)) for k in arms}
    return LogisticPropensity(fits, n_arms)


def _arm_seed(seed: int, arm: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(arm),)))


def fit_single_index_net(table: ObservationTable, cfg: TrainConfig) -> SingleIndexOutcome:
    """Train the bottleneck outcome regression on ``table``.

    Stratified mode trains one network per arm (raising ``EmptyStratum`` for
    an arm without rows); joint mode trains one network with the arm id as an
    extra index input.
    """
    if cfg.mode == "stratified":
        nets = {}
        for k in range(table.n_arms):
            sub = strata(table, k)
            nets[k] = train_network(sub.covariates, sub.outcomes, cfg, rng=_arm_seed(cfg.seed, k))
        return SingleIndexOutcome("stratified", nets, table.n_arms)
    net = train_network(table.covariates, table.outcomes, cfg,
                        t=table.treatments.astype(float), rng=_arm_seed(cfg.seed, 0))
    return SingleIndexOutcome("joint", {0: net}, table.n_arms)


def fit_linear_outcome(table: ObservationTable, cfg: OLSConfig) -> LinearOutcome:
    if cfg.mode == "stratified":
        fits = {}
        for k in range(table.n_arms):
            sub = strata(table, k)
            fits[k] = fit_ols(sub.covariates, sub.outcomes)
        return LinearOutcome("stratified", fits, table.n_arms)
    design = np.column_stack([table.treatments.astype(float), table.covariates])
    return LinearOutcome("joint", {0: fit_ols(design, table.outcomes)}, table.n_arms)


def fit_outcome(table: ObservationTable, cfg: RegressionConfig):
    """Dispatch on the config type."""
    if isinstance(cfg, TrainConfig):
        return fit_single_index_net(table, cfg)
    if isinstance(cfg, OLSConfig):
        return fit_linear_outcome(table, cfg)
    raise ConfigError(f"unsupported regression config {type(cfg).__name__}")
