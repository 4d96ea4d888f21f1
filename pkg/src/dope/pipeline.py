"""Named estimation methods sharing nuisance fits on one sample.

Used by the simulation harness and the ``estimate`` command so both compute a
method identically from ``(table, settings, seed)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .data import ContrastSpec, ObservationTable, strata
from .errors import ConfigError
from .estimators import (
    ClipRange,
    IndexSets,
    aipw_estimate,
    bcl_nuisances_from_outcome,
    crossfit_dope,
    dope_from_nuisances,
    dope_nuisances_from_outcome,
    ipw_estimate,
    regression_estimate,
)
from .inference import influence_variance
from .regressors.models import OLSConfig, fit_outcome, fit_propensity
from .regressors.network import TrainConfig

OLS_METHODS = ("reg-ols", "aipw-ols", "dope-ols")
NN_METHODS = ("reg-nn", "aipw-nn", "dope-idx", "dope-bcl", "crossfit-dope")
PLAIN_METHODS = ("naive", "ipw")
ALL_METHODS = PLAIN_METHODS + OLS_METHODS + NN_METHODS
MODE_FREE = frozenset(PLAIN_METHODS)


@dataclass(frozen=True)
class MethodSettings:
    """Nuisance settings shared by all methods.

    ``network.mode`` and ``ols.mode`` select stratified or joint outcome
    regression; ``network.seed`` is replaced by the per-call seed.
    """

    network: TrainConfig = field(default_factory=TrainConfig)
    ols: OLSConfig = field(default_factory=OLSConfig)
    clip: ClipRange = field(default_factory=ClipRange)
    crossfit_folds: int = 3

    @classmethod
    def for_mode(cls, mode: str, network: Optional[TrainConfig] = None, clip: Optional[ClipRange] = None,
                 crossfit_folds: int = 3) -> "MethodSettings":
        base = network or TrainConfig()
        net = TrainConfig(base.learning_rate, base.iterations, base.seed, base.loss, mode)
        return cls(net, OLSConfig(mode), clip or ClipRange(), crossfit_folds)


@dataclass(frozen=True)
class MethodResult:
    value: float
    se: Optional[float] = None


def validate_methods(methods: Sequence[str]) -> tuple:
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; choose from {list(ALL_METHODS)}")
    if not methods:
        raise ConfigError("no methods requested")
    return tuple(methods)


def _coefficients(table: ObservationTable, target) -> Dict[int, float]:
    if isinstance(target, ContrastSpec):
        target.validate(table.n_arms)
        return dict(target.coefficients)
    return {table.label_id(target): 1.0}


def _se(terms) -> float:
    v = influence_variance(terms)
    return v.se


def naive_estimate(table: ObservationTable, target) -> MethodResult:
    """Combination of the observed arm means and its standard error."""
    value = 0.0
    var = 0.0
    for t, c in _coefficients(table, target).items():
        y = strata(table, t).outcomes
        value += c * y.mean()
        var += c * c * y.var() / y.size
    return MethodResult(float(value), float(np.sqrt(var)))


def compute_methods(table: ObservationTable, methods: Sequence[str], target=1,
                    settings: MethodSettings = MethodSettings(), seed: int = 0) -> Dict[str, MethodResult]:
    """Estimate ``target`` with every requested method.

    One outcome fit per regression family and one logistic propensity on the
    covariates are shared by all methods that use them.  Standard errors are
    influence-function based; the regression estimators borrow the AIPW
    terms of their own outcome fit.
    """
    methods = validate_methods(methods)
    clip = settings.clip
    out: Dict[str, MethodResult] = {}
    need_prop = any(m in methods for m in ("ipw", "aipw-ols", "aipw-nn", "reg-ols", "reg-nn"))
    prop_w = fit_propensity(table.covariates, table.treatments, table.n_arms) if need_prop else None
    full = IndexSets.full(table.n)

    if "naive" in methods:
        out["naive"] = naive_estimate(table, target)
    if "ipw" in methods:
        est = ipw_estimate(prop_w, table, target, clip)
        out["ipw"] = MethodResult(est.value, _se(est.per_row_terms))

    families = (
        ("ols", OLS_METHODS, settings.ols, "dope-ols"),
        ("nn", NN_METHODS, settings.network.with_seed(seed), "dope-idx"),
    )
    for tag, names, cfg, dope_name in families:
        wanted = [m for m in names if m in methods and m != "crossfit-dope"]
        if not wanted:
            continue
        g = fit_outcome(table, cfg)
        aipw = aipw_estimate(prop_w, g, table, target, clip) if need_prop else None
        for m in wanted:
            if m.startswith("reg-"):
                est = regression_estimate(g, table, target)
                out[m] = MethodResult(est.value, _se(aipw.per_row_terms))
            elif m.startswith("aipw-"):
                out[m] = MethodResult(aipw.value, _se(aipw.per_row_terms))
            elif m == dope_name:
                nuis = dope_nuisances_from_outcome(g, table, full, cfg)
                est = dope_from_nuisances(nuis, table, target, clip)
                out[m] = MethodResult(est.value, _se(est.per_row_terms))
            elif m == "dope-bcl":
                nuis = bcl_nuisances_from_outcome(g, table, full)
                est = dope_from_nuisances(nuis, table, target, clip)
                out[m] = MethodResult(est.value, _se(est.per_row_terms))

    if "crossfit-dope" in methods:
        res = crossfit_dope(table, settings.crossfit_folds, regression_cfg=settings.network.with_seed(seed),
                            clip=clip, seed=seed, target=target, variant="three_fold")
        out["crossfit-dope"] = MethodResult(res.estimate, float(np.sqrt(res.variance / res.n_effective)))
    return {m: out[m] for m in methods}
