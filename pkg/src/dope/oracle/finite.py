"""Exact finite joint laws of (T, W, Y), partitions of the W-support, and the
adjusted-mean functionals computed by enumeration."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..data import ContrastSpec, ObservationTable
from ..errors import ConfigError, DimensionMismatch, PositivityViolation

MASS_TOL = 1e-14


def fsum(values) -> float:
    """Compensated sum of every entry of ``values``."""
    return math.fsum(np.ravel(np.asarray(values, dtype=float)).tolist())


@dataclass(frozen=True, eq=False)
class FiniteJointDistribution:
    """Probability mass on triples ``(t, w, y)``.

    Attributes
    ----------
    pmf : (K, M, L) array
        ``pmf[t, j, l]`` is the mass of treatment ``t``, covariate atom ``j``
        and outcome value ``y_values[t, j, l]``.
    y_values : (L,) or (K, M, L) array
        Outcome values; a vector is a support shared by every ``(t, w)``.
    w_embedding : optional (M, q) array
        Real coordinates of the atoms, used when sampling.
    """

    pmf: np.ndarray
    y_values: np.ndarray
    w_embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        pmf = np.array(self.pmf, dtype=float)
        if pmf.ndim != 3:
            raise DimensionMismatch("pmf must have shape (K, M, L)")
        K, M, L = pmf.shape
        if K < 2:
            raise ConfigError("need at least two treatment values")
        yv = np.broadcast_to(np.asarray(self.y_values, dtype=float), pmf.shape).copy()
        if np.any(pmf < 0.0) or not np.all(np.isfinite(pmf)):
            raise ValueError("pmf entries must be finite and nonnegative")
        if abs(fsum(pmf) - 1.0) > MASS_TOL:
            raise ValueError(f"pmf sums to {fsum(pmf)!r}, not 1")
        emb = None
        if self.w_embedding is not None:
            emb = np.array(self.w_embedding, dtype=float)
            if emb.ndim == 1:
                emb = emb[:, None]
            if emb.shape[0] != M:
                raise DimensionMismatch("w_embedding needs one row per atom")
            emb.setflags(write=False)
        pmf.setflags(write=False)
        yv.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "y_values", yv)
        object.__setattr__(self, "w_embedding", emb)
        self._check_positivity()

    @property
    def K(self) -> int:
        return self.pmf.shape[0]

    @property
    def M(self) -> int:
        return self.pmf.shape[1]

    def p_w(self) -> np.ndarray:
        return np.array([fsum(self.pmf[:, j, :]) for j in range(self.M)])

    def p_tw(self) -> np.ndarray:
        return np.array([[fsum(self.pmf[t, j, :]) for j in range(self.M)] for t in range(self.K)])

    def propensity(self) -> np.ndarray:
        """``P(T=t | W=w)`` as a ``(K, M)`` array; NaN on null atoms."""
        pw = self.p_w()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(pw > 0, self.p_tw() / np.where(pw > 0, pw, 1.0), np.nan)

    def _check_positivity(self):
        pw = self.p_w()
        ptw = self.p_tw()
        live = pw > 0
        if np.any(ptw[:, live] <= 0.0) or np.any(ptw[:, live] >= pw[live]):
            raise PositivityViolation("some treatment has conditional probability 0 or 1 on a covariate atom")

    def y_levels(self):
        """Distinct outcome values and the code of every ``(t, w, l)`` entry."""
        levels, codes = np.unique(self.y_values, return_inverse=True)
        return levels, codes.reshape(self.pmf.shape)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.pmf.tobytes())
        h.update(self.y_values.tobytes())
        return h.hexdigest()

    def sample(self, n: int, rng: np.random.Generator) -> ObservationTable:
        """Draw ``n`` iid rows; covariates are the atom embeddings (or ids)."""
        flat = self.pmf.ravel()
        cells = rng.choice(flat.size, size=n, p=flat / flat.sum())
        t, j, l = np.unravel_index(cells, self.pmf.shape)
        emb = self.w_embedding if self.w_embedding is not None else np.arange(self.M, dtype=float)[:, None]
        return ObservationTable.from_arrays(
            t, emb[j], self.y_values[t, j, l], labels=tuple(str(k) for k in range(self.K))
        )


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of each covariate atom to a cell; cell ids are contiguous
    and numbered by first appearance."""

    cell_of: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.cell_of).ravel()
        _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
        rank = np.empty(first.size, dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(first.size)
        labels = rank[inverse]
        labels.setflags(write=False)
        object.__setattr__(self, "cell_of", labels)

    @property
    def cells(self) -> int:
        return int(self.cell_of.max()) + 1

    @property
    def M(self) -> int:
        return self.cell_of.size

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.cell_of == c)

    @classmethod
    def trivial(cls, M: int) -> "Partition":
        return cls(np.zeros(M, dtype=np.int64))

    @classmethod
    def finest(cls, M: int) -> "Partition":
        return cls(np.arange(M))

    @classmethod
    def from_values(cls, values, tol: float = 1e-12) -> "Partition":
        """Group atoms whose value vectors agree within ``tol`` coordinatewise.

        Rows are sorted lexicographically and a new cell starts whenever a
        row differs from its predecessor by more than ``tol``.
        """
        V = np.asarray(values, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        order = np.lexsort(V.T[::-1])
        cell = np.empty(V.shape[0], dtype=np.int64)
        current = 0
        for pos, j in enumerate(order):
            if pos > 0 and np.any(np.abs(V[j] - V[order[pos - 1]]) > tol):
                current += 1
            cell[j] = current
        return cls(cell)

    def refines(self, coarser: "Partition") -> bool:
        """True if every cell of ``self`` lies inside one cell of ``coarser``."""
        if coarser.M != self.M:
            raise DimensionMismatch("partitions cover different supports")
        for c in range(self.cells):
            if np.unique(coarser.cell_of[self.members(c)]).size > 1:
                return False
        return True

    def same_as(self, other: "Partition") -> bool:
        return np.array_equal(self.cell_of, other.cell_of)


@dataclass(frozen=True)
class AdjustedFunctionals:
    """Functionals of one description, for every treatment arm.

    ``pi[t, c]`` and ``b[t, c]`` are the cell propensity and outcome mean,
    ``psi[t]`` the influence function of ``mu[t]`` on every support triple,
    ``v[t]`` its second moment.  ``psi_delta`` and ``v_delta`` refer to the
    requested contrast (``None`` without one).
    """

    partition: Partition
    p_cell: np.ndarray
    pi: np.ndarray
    b: np.ndarray
    mu: np.ndarray
    psi: np.ndarray
    v: np.ndarray
    psi_mean: np.ndarray
    contrast: Optional[np.ndarray] = None
    psi_delta: Optional[np.ndarray] = None
    v_delta: Optional[float] = None


def cell_sums(dist: FiniteJointDistribution, partition: Partition):
    """``P(cell)``, ``P(T=t, cell)`` and ``E[Y 1(T=t, cell)]`` by compensated sums."""
    if partition.M != dist.M:
        raise DimensionMismatch("partition does not match the covariate support")
    C, K = partition.cells, dist.K
    p_c = np.empty(C)
    p_tc = np.empty((K, C))
    s_tc = np.empty((K, C))
    for c in range(C):
        idx = partition.members(c)
        p_c[c] = fsum(dist.pmf[:, idx, :])
        for t in range(K):
            p_tc[t, c] = fsum(dist.pmf[t, idx, :])
            s_tc[t, c] = fsum(dist.pmf[t, idx, :] * dist.y_values[t, idx, :])
    return p_c, p_tc, s_tc


def exact_functionals(dist: FiniteJointDistribution, partition: Partition,
                      contrast: Optional[ContrastSpec] = None) -> AdjustedFunctionals:
    """Enumerate the adjusted-mean functionals of the description ``partition``.

    Cells of zero mass carry NaN propensity and outcome mean and contribute
    nothing to expectations.

    Raises
    ------
    PositivityViolation
        If a cell of positive mass has a treatment probability of 0 or 1.
    """
    p_c, p_tc, s_tc = cell_sums(dist, partition)
    live = p_c > 0
    if np.any(p_tc[:, live] <= 0.0) or np.any(p_tc[:, live] >= p_c[live]):
        raise PositivityViolation("a cell has treatment probability 0 or 1")
    K = dist.K
    pi = np.full_like(p_tc, np.nan)
    b = np.full_like(p_tc, np.nan)
    pi[:, live] = p_tc[:, live] / p_c[live]
    b[:, live] = s_tc[:, live] / p_tc[:, live]
    mu = np.array([fsum(p_c[live] * b[t, live]) for t in range(K)])

    cell = partition.cell_of
    atom_live = live[cell]
    tgrid = np.arange(K)[:, None, None]
    psi = np.zeros((K,) + dist.pmf.shape)
    v = np.empty(K)
    psi_mean = np.empty(K)
    for s in range(K):
        bs = np.where(atom_live, b[s, cell], 0.0)[None, :, None]
        ps = np.where(atom_live, pi[s, cell], 1.0)[None, :, None]
        val = bs + (tgrid == s) / ps * (dist.y_values - bs) - mu[s]
        psi[s] = np.where(atom_live[None, :, None], val, 0.0)
        v[s] = fsum(dist.pmf * psi[s] ** 2)
        psi_mean[s] = fsum(dist.pmf * psi[s])

    c_vec = psi_delta = v_delta = None
    if contrast is not None:
        c_vec = contrast.as_vector(K)
        psi_delta = np.tensordot(c_vec, psi, axes=1)
        v_delta = fsum(dist.pmf * psi_delta ** 2)
    return AdjustedFunctionals(partition, p_c, pi, b, mu, psi, v, psi_mean, c_vec, psi_delta, v_delta)
