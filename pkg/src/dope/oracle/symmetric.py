"""Exact evaluation of the symmetric-covariate example.

``W`` is uniform on a grid symmetric about 1/2, ``P(T=1 | W) = W`` and
``Y = T + g(|W - 1/2|) + v(W) eps`` with ``eps = +-1``.  The three
descriptions compared are the trivial one, ``Z = |W - 1/2|`` and ``W``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import AsymmetricGrid, ConfigError
from .finite import FiniteJointDistribution, Partition, exact_functionals, fsum

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class SymmetricExampleSpec:
    delta: float = 0.1
    grid_size: int = 101
    g: Callable = lambda z: z
    v: Callable = lambda w: w ** 2
    grid: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 < self.delta < 0.5:
            raise ConfigError("delta must lie in (0, 1/2)")
        if self.grid is None and (self.grid_size < 3 or self.grid_size % 2 == 0):
            raise ConfigError("grid_size must be an odd count of at least 3")

    def support(self) -> np.ndarray:
        if self.grid is not None:
            w = np.sort(np.asarray(self.grid, dtype=float))
        else:
            w = np.linspace(self.delta, 1.0 - self.delta, self.grid_size)
            w = 0.5 * (w + (1.0 - w[::-1]))
        if np.any(np.abs(w + w[::-1] - 1.0) > SYMMETRY_TOL):
            raise AsymmetricGrid("covariate grid is not symmetric about 1/2")
        if w[0] < self.delta - SYMMETRY_TOL or w[-1] > 1.0 - self.delta + SYMMETRY_TOL:
            raise AsymmetricGrid("covariate grid leaves [delta, 1 - delta]")
        return w


def symmetric_distribution(spec: SymmetricExampleSpec):
    """Joint law and the partitions ``(0, Z, W)``."""
    w = spec.support()
    M = w.size
    z = np.abs(w - 0.5)
    gz = np.asarray(np.broadcast_to(spec.g(z), (M,)), dtype=float)
    vw = np.asarray(np.broadcast_to(spec.v(w), (M,)), dtype=float)
    eps = np.array([-1.0, 1.0])
    p_t = np.stack([1.0 - w, w])
    pmf = (1.0 / M) * p_t[:, :, None] * np.full((1, 1, 2), 0.5)
    t = np.arange(2)[:, None, None]
    y = t + gz[None, :, None] + vw[None, :, None] * eps[None, None, :]
    dist = FiniteJointDistribution(pmf / pmf.sum(), y, w_embedding=w)
    z_part = Partition.from_values(np.round(z, 12))
    return dist, Partition.trivial(M), z_part, Partition.finest(M)


@dataclass(frozen=True)
class SymmetricRow:
    quantity: str
    closed_form: float
    exact_value: float

    @property
    def abs_error(self) -> float:
        return abs(self.closed_form - self.exact_value)


def _mean(x) -> float:
    return fsum(x) / np.size(x)


def symmetric_example_check(spec: SymmetricExampleSpec, t: int = 1) -> list:
    """Exact variances of the three descriptions against closed forms.

    Rows ``V(0)``, ``V(Z)``, ``V(W)`` use the closed forms
    ``2 var g + 2 E[v^2]``, ``var g + 2 E[v^2]`` and ``var g + E[v^2 / W]``
    (with ``E[eps^2] = 1``).  Rows suffixed ``general`` use
    ``2 var g + 4 E[pi_t v^2]``, ``var g + 4 E[pi_t v^2]`` and
    ``var g + E[v^2 / pi_t]``, which hold for any ``v``; the two families
    agree when ``E[pi_t(W) v(W)^2] = E[v^2] / 2``, e.g. for ``v`` symmetric
    about 1/2.  The ``V(W)`` form is written for ``t = 1``.  Rows
    ``2E[W^4]`` and ``E[W^3]`` compare grid moments with their
    continuous-uniform expressions, which are exact only in the limit of a
    fine grid.
    """
    if t not in (0, 1):
        raise ConfigError("t must be 0 or 1")
    dist, trivial, zpart, finest = symmetric_distribution(spec)
    w = spec.support()
    z = np.abs(w - 0.5)
    gz = np.asarray(np.broadcast_to(spec.g(z), w.shape), dtype=float)
    v2 = np.asarray(np.broadcast_to(spec.v(w), w.shape), dtype=float) ** 2
    pi_t = w if t == 1 else 1.0 - w
    var_g = _mean((gz - _mean(gz)) ** 2)
    ev2 = _mean(v2)
    e_pi_v2 = _mean(pi_t * v2)
    exact = {name: exact_functionals(dist, part).v[t]
             for name, part in (("0", trivial), ("Z", zpart), ("W", finest))}
    d = spec.delta
    rows = [
        SymmetricRow("V(0)", 2 * var_g + 2 * ev2, exact["0"]),
        SymmetricRow("V(Z)", var_g + 2 * ev2, exact["Z"]),
        SymmetricRow("V(W)", var_g + _mean(v2 / w), exact["W"]),
        SymmetricRow("V(0) general", 2 * var_g + 4 * e_pi_v2, exact["0"]),
        SymmetricRow("V(Z) general", var_g + 4 * e_pi_v2, exact["Z"]),
        SymmetricRow("V(W) general", var_g + _mean(v2 / pi_t), exact["W"]),
        SymmetricRow("2E[W^4]", 2 * ((1 - d) ** 5 - d ** 5) / (5 * (1 - 2 * d)), 2 * _mean(w ** 4)),
        SymmetricRow("E[W^3]", ((1 - d) ** 4 - d ** 4) / (4 * (1 - 2 * d)), _mean(w ** 3)),
    ]
    return rows
