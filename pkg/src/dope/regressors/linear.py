"""Ordinary least squares with an intercept."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, RankDeficient, TooFewRows


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.coefficients.shape[0]:
            raise DimensionMismatch(
                f"expected {self.coefficients.shape[0]} features, got {X.shape[1]}"
            )
        return X @ self.coefficients + self.intercept

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients.tolist(), "intercept": float(self.intercept)}


def with_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def fit_ols(design, targets, rcond: float = 1e-10) -> LinearModel:
    """Least-squares fit of ``targets`` on ``[1, design]``.

    Parameters
    ----------
    design : (n, p) array
    targets : (n,) array
    rcond : float
        Singular values below ``rcond * s_max`` count as zero when checking
        the rank of the augmented design.

    Raises
    ------
    RankDeficient
        If the augmented design does not have full column rank.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(targets, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise DimensionMismatch("targets must be a vector with one entry per row")
    if n < p + 1:
        raise TooFewRows(f"{n} rows cannot identify {p + 1} coefficients")
    A = with_intercept(X)
    coef, _, rank, sv = np.linalg.lstsq(A, y, rcond=rcond)
    if rank < p + 1:
        raise RankDeficient(f"design has rank {rank} < {p + 1} (intercept included)")
    return LinearModel(coefficients=coef[1:].copy(), intercept=float(coef[0]))
