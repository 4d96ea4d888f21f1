"""Unpenalized logistic regression fitted by Newton/IRLS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import DimensionMismatch
from .linear import with_intercept

ETA_CAP = 30.0


@dataclass(frozen=True)
class LogisticModel:
    """Fitted logistic regression.

    ``score`` is the log-likelihood gradient (summed over rows, intercept
    first) at the returned coefficients.
    """

    coefficients: np.ndarray
    intercept: float
    converged: bool
    iterations: int
    score: np.ndarray

    @property
    def score_norm(self) -> float:
        return float(np.max(np.abs(self.score))) if self.score.size else 0.0

    def linear_predictor(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.coefficients.shape[0]:
            raise DimensionMismatch(
                f"expected {self.coefficients.shape[0]} features, got {X.shape[1]}"
            )
        return np.clip(X @ self.coefficients + self.intercept, -ETA_CAP, ETA_CAP)

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.linear_predictor(X))

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "intercept": float(self.intercept),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }


def predict_propensity(model: LogisticModel, features) -> np.ndarray:
    """Probability of the positive class: sigmoid of the capped linear predictor."""
    return model.predict_proba(features)


def _loglik(A, y, beta):
    eta = np.clip(A @ beta, -ETA_CAP, ETA_CAP)
    return float(np.sum(y * eta - np.logaddexp(0.0, eta))), eta


def fit_logistic_irls(design, labels, tol: float = 1e-8, max_iter: int = 100) -> LogisticModel:
    """Maximum-likelihood logistic fit with intercept.

    Newton steps are halved until the log-likelihood does not decrease.
    Iteration stops once every coordinate of the summed score is below
    ``tol`` in magnitude.  The linear predictor is capped at ``+-30`` so
    separable data yields a finite (non-converged) fit.

    A sample with a single class returns intercept ``+-30``, zero slopes and
    ``converged=False``.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise DimensionMismatch("labels must be a vector with one entry per row")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        b0 = ETA_CAP if y[0] == 1.0 else -ETA_CAP
        A = with_intercept(X)
        score = A.T @ (y - expit(np.full(n, b0)))
        return LogisticModel(np.zeros(p), b0, False, 0, score)

    A = with_intercept(X)
    beta = np.zeros(p + 1)
    ybar = y.mean()
    beta[0] = np.log(ybar / (1.0 - ybar))
    ll, eta = _loglik(A, y, beta)
    converged = False
    iterations = 0
    while True:
        mu = expit(eta)
        score = A.T @ (y - mu)
        if np.max(np.abs(score)) < tol:
            converged = True
            break
        if iterations == max_iter:
            break
        w = mu * (1.0 - mu)
        hess = A.T @ (A * w[:, None])
        step = np.linalg.lstsq(hess, score, rcond=None)[0]
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            ll_new, eta_new = _loglik(A, y, cand)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            break
        beta, ll, eta = cand, ll_new, eta_new
        iterations += 1
    return LogisticModel(beta[1:].copy(), float(beta[0]), converged, iterations, score)
