"""Exact checks of the variance identities relating nested descriptions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..data import ContrastSpec
from ..errors import CIViolated, NotARefinement
from .finite import FiniteJointDistribution, Partition, cell_sums, exact_functionals, fsum

CI_TOL = 1e-12


def _require_refinement(Z1: Partition, Z2: Partition):
    if not Z2.refines(Z1):
        raise NotARefinement("Z2 must refine Z1")


def _parent_cells(Z1: Partition, Z2: Partition) -> np.ndarray:
    """Cell of Z1 containing each cell of Z2."""
    return np.array([Z1.cell_of[Z2.members(c)[0]] for c in range(Z2.cells)])


def _cond_var(weights, values) -> float:
    w = np.asarray(weights, dtype=float)
    x = np.asarray(values, dtype=float)
    tot = fsum(w)
    m = fsum(w * x) / tot
    return fsum(w * (x - m) ** 2) / tot


def _cond_cov(weights, x, y) -> float:
    w = np.asarray(weights, dtype=float)
    tot = fsum(w)
    mx = fsum(w * x) / tot
    my = fsum(w * y) / tot
    return fsum(w * (x - mx) * (y - my)) / tot


def outcome_laws(dist: FiniteJointDistribution, partition: Partition) -> np.ndarray:
    """``P(Y = level | T=t, cell)`` as a ``(K, cells, levels)`` array (NaN on
    cells without treatment mass)."""
    levels, codes = dist.y_levels()
    K, C = dist.K, partition.cells
    out = np.full((K, C, levels.size), np.nan)
    for c in range(C):
        idx = partition.members(c)
        for t in range(K):
            w = dist.pmf[t, idx, :].ravel()
            tot = fsum(w)
            if tot > 0:
                out[t, c] = np.bincount(codes[t, idx, :].ravel(), weights=w, minlength=levels.size) / tot
    return out


def check_outcome_ci(dist, Z1, Z2, tol: float = CI_TOL) -> float:
    """Largest deviation of ``p(y | t, z2)`` from ``p(y | t, z1)``."""
    parent = _parent_cells(Z1, Z2)
    l1 = outcome_laws(dist, Z1)
    l2 = outcome_laws(dist, Z2)
    dev = np.abs(l2 - l1[:, parent, :])
    dev = float(np.nanmax(dev)) if np.any(np.isfinite(dev)) else 0.0
    if dev > tol:
        raise CIViolated(f"Y is not independent of Z2 given (T, Z1): deviation {dev:.3g}")
    return dev


def check_treatment_ci(dist, Z1, Z2, tol: float = CI_TOL) -> float:
    """Largest deviation of ``P(T=t | z2)`` from ``P(T=t | z1)``."""
    parent = _parent_cells(Z1, Z2)
    p1, pt1, _ = cell_sums(dist, Z1)
    p2, pt2, _ = cell_sums(dist, Z2)
    live = p2 > 0
    dev = np.abs(pt2[:, live] / p2[live] - (pt1 / p1)[:, parent[live]])
    dev = float(dev.max()) if dev.size else 0.0
    if dev > tol:
        raise CIViolated(f"T is not independent of Z2 given Z1: deviation {dev:.3g}")
    return dev


@dataclass(frozen=True)
class DeletionReport:
    v_delta_coarse: float
    v_delta_fine: float
    D: np.ndarray
    mu_discrepancy: float
    max_abs_discrepancy: float


def deletion_terms(dist, Z1: Partition, Z2: Partition) -> np.ndarray:
    """``D_t = E[pi_t(Z1) Var(Y | T=t, Z1) Var(1/pi_t(Z2) | T=t, Z1)]`` per arm."""
    parent = _parent_cells(Z1, Z2)
    f1 = exact_functionals(dist, Z1)
    f2 = exact_functionals(dist, Z2)
    p1, pt1, _ = cell_sums(dist, Z1)
    _, pt2, _ = cell_sums(dist, Z2)
    D = np.zeros(dist.K)
    for t in range(dist.K):
        terms = []
        for c1 in range(Z1.cells):
            if pt1[t, c1] <= 0:
                continue
            idx = Z1.members(c1)
            var_y = fsum(dist.pmf[t, idx, :] * (dist.y_values[t, idx, :] - f1.b[t, c1]) ** 2) / pt1[t, c1]
            kids = np.flatnonzero(parent == c1)
            kids = kids[pt2[t, kids] > 0]
            var_inv = _cond_var(pt2[t, kids], 1.0 / f2.pi[t, kids])
            terms.append(p1[c1] * f1.pi[t, c1] * var_y * var_inv)
        D[t] = fsum(terms)
    return D


def check_deletion_identity(dist: FiniteJointDistribution, Z1: Partition, Z2: Partition,
                            contrast: ContrastSpec) -> DeletionReport:
    """Compare ``V_delta(Z2) - V_delta(Z1)`` with ``sum_t c_t^2 D_t``.

    Requires Z2 to refine Z1 and ``Y`` independent of Z2 given ``(T, Z1)``.
    """
    _require_refinement(Z1, Z2)
    check_outcome_ci(dist, Z1, Z2)
    f1 = exact_functionals(dist, Z1, contrast)
    f2 = exact_functionals(dist, Z2, contrast)
    D = deletion_terms(dist, Z1, Z2)
    c = f1.contrast
    gap = abs(f2.v_delta - f1.v_delta - fsum(c ** 2 * D))
    mu_gap = float(np.max(np.abs(f1.mu - f2.mu)))
    return DeletionReport(f1.v_delta, f2.v_delta, D, mu_gap, float(gap))


@dataclass(frozen=True)
class SupplementationReport:
    v_delta_coarse: float
    v_delta_fine: float
    var_R_direct: np.ndarray
    var_R_formula: np.ndarray
    decomposition_discrepancy: float
    variance_discrepancy: float
    covariance_discrepancy: float
    mu_discrepancy: float

    @property
    def max_abs_discrepancy(self) -> float:
        return max(self.decomposition_discrepancy, self.variance_discrepancy, self.covariance_discrepancy)


def remainder_terms(dist, Z1: Partition, Z2: Partition) -> np.ndarray:
    """``R_t = (1(T=t)/pi_t(Z2) - 1)(b_t(Z2) - b_t(Z1))`` on every support triple."""
    f1 = exact_functionals(dist, Z1)
    f2 = exact_functionals(dist, Z2)
    K = dist.K
    tgrid = np.arange(K)[:, None, None]
    R = np.zeros((K,) + dist.pmf.shape)
    for t in range(K):
        pi2 = f2.pi[t, Z2.cell_of][None, :, None]
        diff = (f2.b[t, Z2.cell_of] - f1.b[t, Z1.cell_of])[None, :, None]
        R[t] = np.nan_to_num(((tgrid == t) / pi2 - 1.0) * diff)
    return R


def check_supplementation_identity(dist: FiniteJointDistribution, Z1: Partition, Z2: Partition,
                                   contrast: ContrastSpec) -> SupplementationReport:
    """Verify ``V_delta(Z1) - V_delta(Z2) = c^T Var[R] c`` and the closed
    forms of ``Var(R_t)`` and ``Cov(R_s, R_t)``, each computed both by direct
    enumeration of ``R`` and from cell-level conditional moments.

    Requires Z2 to refine Z1 and ``T`` independent of Z2 given Z1.
    """
    _require_refinement(Z1, Z2)
    check_treatment_ci(dist, Z1, Z2)
    f1 = exact_functionals(dist, Z1, contrast)
    f2 = exact_functionals(dist, Z2, contrast)
    K = dist.K
    R = remainder_terms(dist, Z1, Z2)
    means = np.array([fsum(dist.pmf * R[t]) for t in range(K)])
    direct = np.empty((K, K))
    for s in range(K):
        for t in range(K):
            direct[s, t] = fsum(dist.pmf * R[s] * R[t]) - means[s] * means[t]

    parent = _parent_cells(Z1, Z2)
    p1, _, _ = cell_sums(dist, Z1)
    p2, _, _ = cell_sums(dist, Z2)
    formula = np.empty((K, K))
    for s in range(K):
        for t in range(K):
            terms = []
            for c1 in range(Z1.cells):
                if p1[c1] <= 0:
                    continue
                kids = np.flatnonzero(parent == c1)
                kids = kids[p2[kids] > 0]
                if s == t:
                    spread = _cond_var(p2[kids], f2.b[t, kids])
                    terms.append(p1[c1] * (1.0 / f1.pi[t, c1] - 1.0) * spread)
                else:
                    terms.append(-p1[c1] * _cond_cov(p2[kids], f2.b[s, kids], f2.b[t, kids]))
            formula[s, t] = fsum(terms)

    c = f1.contrast
    lhs = f1.v_delta - f2.v_delta
    decomp = max(abs(lhs - float(c @ direct @ c)), abs(lhs - float(c @ formula @ c)))
    diag = np.eye(K, dtype=bool)
    var_gap = float(np.max(np.abs(direct[diag] - formula[diag])))
    cov_gap = float(np.max(np.abs(direct[~diag] - formula[~diag]))) if K > 1 else 0.0
    mu_gap = float(np.max(np.abs(f1.mu - f2.mu)))
    return SupplementationReport(f1.v_delta, f2.v_delta, direct, formula, decomp, var_gap, cov_gap, mu_gap)


def check_inverse_propensity_projection(dist: FiniteJointDistribution, Z1: Partition, Z2: Partition,
                                        t: int) -> float:
    """Largest cell-wise gap between ``E[1/pi_t(Z2) | T=t, Z1]`` and ``1/pi_t(Z1)``."""
    _require_refinement(Z1, Z2)
    parent = _parent_cells(Z1, Z2)
    f1 = exact_functionals(dist, Z1)
    f2 = exact_functionals(dist, Z2)
    _, pt1, _ = cell_sums(dist, Z1)
    _, pt2, _ = cell_sums(dist, Z2)
    worst = 0.0
    for c1 in range(Z1.cells):
        if pt1[t, c1] <= 0:
            continue
        kids = np.flatnonzero(parent == c1)
        kids = kids[pt2[t, kids] > 0]
        lhs = fsum(pt2[t, kids] / f2.pi[t, kids]) / pt1[t, c1]
        worst = max(worst, abs(lhs - 1.0 / f1.pi[t, c1]))
    return worst


def propensity_partition(dist: FiniteJointDistribution, tol: float = 1e-12) -> Partition:
    """Partition of the atoms by their vector of treatment probabilities."""
    prop = dist.propensity()
    prop = np.where(np.isnan(prop), -1.0, prop)
    return Partition.from_values(prop.T, tol)


@dataclass(frozen=True)
class PropensityDescriptionReport:
    partition: Partition
    mu_discrepancy: float
    v_delta_propensity: float
    v_delta_refinement: float
    ordering_holds: bool


def check_propensity_description(dist: FiniteJointDistribution, contrast: ContrastSpec,
                                 Z: Optional[Partition] = None) -> PropensityDescriptionReport:
    """Compare the propensity-induced description with the covariates
    themselves (mean validity) and with a refinement ``Z`` (variance)."""
    P = propensity_partition(dist)
    Z = Partition.finest(dist.M) if Z is None else Z
    _require_refinement(P, Z)
    fp = exact_functionals(dist, P, contrast)
    fw = exact_functionals(dist, Partition.finest(dist.M), contrast)
    fz = exact_functionals(dist, Z, contrast)
    mu_gap = float(np.max(np.abs(fp.mu - fw.mu)))
    return PropensityDescriptionReport(P, mu_gap, fp.v_delta, fz.v_delta,
                                       bool(fp.v_delta <= fz.v_delta + 1e-12))


@dataclass(frozen=True)
class BinaryOutcomeReport:
    mean_partition: Partition
    law_partition: Partition
    partitions_equal: bool
    v_delta_gap: float


def check_binary_outcome_descriptions(dist: FiniteJointDistribution, contrast: ContrastSpec,
                                      tol: float = 1e-12) -> BinaryOutcomeReport:
    """For outcomes in {0, 1}, the description generated by the conditional
    means ``b_t(W)`` and the one generated by the conditional laws of ``Y``
    given ``(T, W)`` have the same ``V_delta``."""
    levels, _ = dist.y_levels()
    if not np.all(np.isin(levels, (0.0, 1.0))):
        raise ValueError("outcomes must lie in {0, 1}")
    fine = Partition.finest(dist.M)
    fw = exact_functionals(dist, fine)
    means = Partition.from_values(np.nan_to_num(fw.b, nan=-1.0).T, tol)
    laws = outcome_laws(dist, fine)
    laws = Partition.from_values(np.nan_to_num(laws, nan=-1.0).transpose(1, 0, 2).reshape(dist.M, -1), tol)
    vm = exact_functionals(dist, means, contrast).v_delta
    vl = exact_functionals(dist, laws, contrast).v_delta
    return BinaryOutcomeReport(means, laws, means.same_as(laws), abs(vm - vl))
