"""Random finite distributions that satisfy the hypotheses of the identity checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigError, InfeasibleSizes
from .finite import FiniteJointDistribution, Partition

PROB_LO = 0.05
PROB_HI = 0.95
KINDS = ("ods_pair", "precision_pair", "binary_outcome", "outcome_free")


@dataclass(frozen=True)
class GeneratorSizes:
    """Arms ``K``, covariate atoms ``M``, outcome values ``L`` and cell
    counts ``C1 <= C2 <= M`` of the coarse and fine partitions."""

    K: int = 2
    M: int = 8
    L: int = 3
    C1: int = 2
    C2: int = 4

    def validate(self):
        if self.K < 2 or self.L < 1 or self.M < 1:
            raise InfeasibleSizes("need K >= 2, L >= 1 and M >= 1")
        if not 1 <= self.C1 <= self.C2 <= self.M:
            raise InfeasibleSizes(f"need 1 <= C1 <= C2 <= M, got C1={self.C1}, C2={self.C2}, M={self.M}")
        if PROB_LO * max(self.K, self.L) > 1.0:
            raise InfeasibleSizes("too many categories for the probability floor")

    @classmethod
    def random(cls, rng: np.random.Generator, K_max: int = 3, M_max: int = 10, L_max: int = 4) -> "GeneratorSizes":
        K = int(rng.integers(2, K_max + 1))
        M = int(rng.integers(2, M_max + 1))
        C2 = int(rng.integers(1, M + 1))
        C1 = int(rng.integers(1, C2 + 1))
        L = int(rng.integers(2, L_max + 1))
        return cls(K, M, L, C1, C2)


def bounded_simplex(rng: np.random.Generator, k: int, size=None) -> np.ndarray:
    """Probability vectors over ``k`` categories with every entry in
    ``[0.05, 0.95]``: a Dirichlet draw mixed with the floor."""
    shape = (k,) if size is None else tuple(np.atleast_1d(size)) + (k,)
    raw = rng.dirichlet(np.ones(k), size=None if size is None else size).reshape(shape)
    p = PROB_LO + (1.0 - PROB_LO * k) * raw
    return p / p.sum(axis=-1, keepdims=True)


def _surjection(rng: np.random.Generator, n_items: int, n_groups: int) -> np.ndarray:
    """Random map of items onto groups hitting every group."""
    labels = np.concatenate([np.arange(n_groups), rng.integers(0, n_groups, size=n_items - n_groups)])
    return rng.permutation(labels)


def generate_compliant_distribution(kind: str, sizes: Optional[GeneratorSizes] = None, seed: int = 0):
    """Random ``(dist, Z1, Z2)`` with Z2 refining Z1.

    ``ods_pair``: the outcome law depends on ``(t, z1)`` only, so ``Y`` is
    independent of Z2 given ``(T, Z1)``; propensities vary freely by atom.
    ``precision_pair``: the propensity depends on ``z1`` only, so ``T`` is
    independent of Z2 given Z1; outcome laws vary freely by atom.
    ``binary_outcome``: outcomes in {0, 1} with a few distinct laws shared
    across atoms.  ``outcome_free``: the outcome law depends on ``t`` only.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown generator kind {kind!r}")
    rng = np.random.default_rng(seed)
    if sizes is None:
        sizes = GeneratorSizes.random(rng)
    if kind == "binary_outcome":
        sizes = GeneratorSizes(sizes.K, sizes.M, 2, sizes.C1, sizes.C2)
    sizes.validate()
    K, M, L = sizes.K, sizes.M, sizes.L

    z2_of_atom = _surjection(rng, M, sizes.C2)
    z1_of_z2 = _surjection(rng, sizes.C2, sizes.C1)
    z1_of_atom = z1_of_z2[z2_of_atom]

    p_w = rng.uniform(PROB_LO, 1.0, size=M)
    if kind == "precision_pair":
        p_t_given_w = bounded_simplex(rng, K, size=sizes.C1)[z1_of_atom]
    else:
        p_t_given_w = bounded_simplex(rng, K, size=M)

    if kind == "binary_outcome":
        y_values = np.array([0.0, 1.0])
        n_laws = int(rng.integers(1, M + 1))
        means = rng.uniform(PROB_LO, PROB_HI, size=(K, n_laws))
        law_of_atom = rng.integers(0, n_laws, size=M)
        p1 = means[:, law_of_atom]
        p_y = np.stack([1.0 - p1, p1], axis=-1)
    else:
        y_values = np.round(rng.normal(0.0, 2.0, size=L), 6)
        if kind == "ods_pair":
            p_y = bounded_simplex(rng, L, size=(K, sizes.C1))[:, z1_of_atom, :]
        elif kind == "outcome_free":
            p_y = np.repeat(bounded_simplex(rng, L, size=K)[:, None, :], M, axis=1)
        else:
            p_y = bounded_simplex(rng, L, size=(K, M))

    pmf = p_w[None, :, None] * p_t_given_w.T[:, :, None] * p_y
    pmf = pmf / pmf.sum()
    dist = FiniteJointDistribution(pmf, y_values, w_embedding=np.arange(M, dtype=float))
    return dist, Partition(z1_of_atom), Partition(z2_of_atom)


def random_refinement_pair(seed: int, sizes: Optional[GeneratorSizes] = None):
    """An unconstrained distribution (all masses positive) with a nested
    partition pair."""
    rng = np.random.default_rng(seed)
    sizes = GeneratorSizes.random(rng) if sizes is None else sizes
    sizes.validate()
    z2 = _surjection(rng, sizes.M, sizes.C2)
    z1 = _surjection(rng, sizes.C2, sizes.C1)[z2]
    pmf = rng.uniform(PROB_LO, 1.0, size=(sizes.K, sizes.M, sizes.L))
    y = np.round(rng.normal(size=sizes.L), 6)
    return FiniteJointDistribution(pmf / pmf.sum(), y), Partition(z1), Partition(z2)
