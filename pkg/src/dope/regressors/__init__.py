"""Nuisance regressions: OLS, logistic IRLS and the single-index network."""

from .linear import LinearModel, fit_ols
from .logistic import LogisticModel, fit_logistic_irls, predict_propensity
from .models import (
    ArmProjectionHead,
    LinearOutcome,
    LogisticPropensity,
    OLSConfig,
    OutcomeModel,
    SingleIndexOutcome,
    fit_linear_outcome,
    fit_outcome,
    fit_propensity,
    fit_single_index_net,
)
from .network import SingleIndexNet, TrainConfig, init_network, loss_and_gradient, train_network

__all__ = [
    "ArmProjectionHead",
    "LinearModel",
    "LinearOutcome",
    "LogisticModel",
    "LogisticPropensity",
    "OLSConfig",
    "OutcomeModel",
    "SingleIndexNet",
    "SingleIndexOutcome",
    "TrainConfig",
    "fit_linear_outcome",
    "fit_logistic_irls",
    "fit_ols",
    "fit_outcome",
    "fit_propensity",
    "fit_single_index_net",
    "init_network",
    "loss_and_gradient",
    "predict_propensity",
    "train_network",
]
