"""Quadrature check of the gradient of the single-index adjusted mean.

For ``W`` on a rectangle with density ``p``, outcome regression
``E[Y | T=t, W] = h(W^T theta_P)`` and propensity ``m(t | W)``, the map

    u(theta) = E[ E[Y | T=t, W^T theta] ]

is evaluated by nested one-dimensional quadrature in coordinates ``(s, w1)``
with ``s = theta^T w`` (requires ``theta[1] != 0``).  Writing ``L``, ``N`` and
``D`` for the integrals of ``p``, ``p m h`` and ``p m`` along the fibre
``{w : theta^T w = s}``, ``u(theta) = int L N / D ds / |theta[1]|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from ..errors import ConfigError, QuadratureNonConvergence

QUAD_TOL = 1e-8
MAX_DEPTH = 40


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = QUAD_TOL,
                     max_depth: int = MAX_DEPTH) -> float:
    """Adaptive Simpson rule with absolute tolerance ``tol``.

    Raises :class:`QuadratureNonConvergence` if an interval needs more than
    ``max_depth`` bisections.
    """
    if b == a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth)


def _simpson_step(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    if depth <= 0:
        raise QuadratureNonConvergence(f"adaptive Simpson failed on [{a}, {b}]")
    return (_simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + _simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1))


@dataclass(frozen=True)
class SmoothIndexDGP:
    """Two-dimensional design for the gradient check.

    ``density(w1, w2)`` on ``[lo1, hi1] x [lo2, hi2]``; ``propensity(w1, w2)``
    is ``m(t | w)``; ``h`` and ``h_prime`` are the link and its derivative
    so that ``E[Y | T=t, W] = h(W^T theta_P)``.
    """

    density: Callable
    propensity: Callable
    h: Callable
    h_prime: Callable
    theta_P: Tuple[float, float]
    box: Tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)

    def index_range(self, theta) -> Tuple[float, float]:
        lo1, hi1, lo2, hi2 = self.box
        corners = [theta[0] * a + theta[1] * b for a in (lo1, hi1) for b in (lo2, hi2)]
        return min(corners), max(corners)

    def corners(self, theta) -> np.ndarray:
        lo1, hi1, lo2, hi2 = self.box
        return np.unique([theta[0] * a + theta[1] * b for a in (lo1, hi1) for b in (lo2, hi2)])


def uniform_square_dgp() -> SmoothIndexDGP:
    """``W ~ U[0,1]^2``, ``h(s) = s^2``, ``m(1 | w) = 0.2 + 0.6 w1``, ``theta_P = (1, 0.5)``."""
    return SmoothIndexDGP(
        density=lambda w1, w2: 1.0,
        propensity=lambda w1, w2: 0.2 + 0.6 * w1,
        h=lambda s: s * s,
        h_prime=lambda s: 2.0 * s,
        theta_P=(1.0, 0.5),
    )


def _fibre(dgp: SmoothIndexDGP, theta, s):
    """``w1`` range of the fibre ``theta^T w = s`` inside the box, and the map
    ``w1 -> w2`` along it."""
    lo1, hi1, lo2, hi2 = dgp.box
    t1, t2 = theta
    ends = sorted(((s - t2 * lo2) / t1, (s - t2 * hi2) / t1)) if t1 != 0 else (lo1, hi1)
    a, b = max(lo1, ends[0]), min(hi1, ends[1])
    if t1 == 0 and not lo2 <= s / t2 <= hi2:
        b = a
    return a, max(a, b), (lambda w1: (s - t1 * w1) / t2)


def _outer(dgp: SmoothIndexDGP, theta, integrand: Callable[[float], float], tol: float) -> float:
    knots = dgp.corners(theta)
    return sum(adaptive_simpson(integrand, knots[i], knots[i + 1], tol) for i in range(len(knots) - 1))


def _fibre_integral(dgp, theta, s, fn, tol):
    a, b, w2 = _fibre(dgp, theta, s)
    if b - a <= 0.0:
        return 0.0
    return adaptive_simpson(lambda w1: fn(w1, w2(w1)), a, b, tol)


def _h_true(dgp: SmoothIndexDGP, w1, w2):
    return dgp.h(dgp.theta_P[0] * w1 + dgp.theta_P[1] * w2)


def index_adjusted_mean(dgp: SmoothIndexDGP, theta, tol: float = QUAD_TOL) -> float:
    """``u(theta)`` by nested adaptive Simpson quadrature."""
    theta = (float(theta[0]), float(theta[1]))
    if theta[1] == 0.0:
        raise ConfigError("theta[1] must be nonzero for the fibre parameterisation")
    p, m = dgp.density, dgp.propensity

    def outer(s):
        L = _fibre_integral(dgp, theta, s, lambda a, b: p(a, b), tol)
        if L <= 0.0:
            return 0.0
        D = _fibre_integral(dgp, theta, s, lambda a, b: p(a, b) * m(a, b), tol)
        N = _fibre_integral(dgp, theta, s, lambda a, b: p(a, b) * m(a, b) * _h_true(dgp, a, b), tol)
        return L * N / D

    return _outer(dgp, theta, outer, tol) / abs(theta[1])


def gradient_formula(dgp: SmoothIndexDGP, tol: float = QUAD_TOL) -> np.ndarray:
    """``E[h'(W^T theta_P) (1 - m(t | W) / P(T=t | W^T theta_P)) W]`` by 2-D quadrature."""
    theta = dgp.theta_P
    p, m = dgp.density, dgp.propensity
    out = np.empty(2)
    for k in range(2):
        def outer(s, k=k):
            L = _fibre_integral(dgp, theta, s, lambda a, b: p(a, b), tol)
            if L <= 0.0:
                return 0.0
            D = _fibre_integral(dgp, theta, s, lambda a, b: p(a, b) * m(a, b), tol)
            prop = D / L

            def inner(a, b):
                coord = a if k == 0 else b
                return p(a, b) * (1.0 - m(a, b) / prop) * coord

            return dgp.h_prime(s) * _fibre_integral(dgp, theta, s, inner, tol)

        out[k] = _outer(dgp, theta, outer, tol) / abs(theta[1])
    return out


def finite_difference_gradient(dgp: SmoothIndexDGP, step: float, tol: float = QUAD_TOL) -> np.ndarray:
    theta = np.asarray(dgp.theta_P, dtype=float)
    grad = np.empty(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        grad[k] = (index_adjusted_mean(dgp, theta + e, tol) - index_adjusted_mean(dgp, theta - e, tol)) / (2 * step)
    return grad


@dataclass(frozen=True)
class GradientCheck:
    fd_gradient: np.ndarray
    fd_gradient_half_step: np.ndarray
    richardson_gradient: np.ndarray
    formula_gradient: np.ndarray

    @property
    def abs_error(self) -> float:
        return float(np.max(np.abs(self.richardson_gradient - self.formula_gradient)))

    @property
    def rel_error(self) -> float:
        """Euclidean error relative to the formula gradient (absolute when it vanishes)."""
        scale = np.linalg.norm(self.formula_gradient)
        err = np.linalg.norm(self.richardson_gradient - self.formula_gradient)
        return float(err / scale) if scale > 1e-12 else float(err)


def si_gradient_check(dgp: SmoothIndexDGP = None, fd_step: float = 1e-3, tol: float = QUAD_TOL) -> GradientCheck:
    """Central differences of ``u`` at ``theta_P`` against the gradient formula.

    Differences are taken at ``fd_step`` and ``fd_step / 2`` and combined by
    Richardson extrapolation, which removes the leading ``O(step^2)`` term.
    """
    dgp = uniform_square_dgp() if dgp is None else dgp
    g1 = finite_difference_gradient(dgp, fd_step, tol)
    g2 = finite_difference_gradient(dgp, fd_step / 2.0, tol)
    rich = (4.0 * g2 - g1) / 3.0
    return GradientCheck(g1, g2, rich, gradient_formula(dgp, tol))
