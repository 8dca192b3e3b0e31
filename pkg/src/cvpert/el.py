"""The function ell and the weak Euler-Lagrange residuals.

ell(x) = sum_j w_j L(x, y_j) - nu/2.  A measure is critical when ell and its
gradient vanish on the support for all test jets.  nu is a fixed scenario
parameter; it is calibrated once and never re-derived while perturbing.
"""

from __future__ import annotations

import numpy as np

from .errors import NotCritical, NumericalFailure
from .jets import TestBasis
from .lagrangian import LagrangianModel
from .measure import DiscreteMeasure


def _unit_index(m: int, k: int) -> tuple:
    idx = [0] * m
    idx[k] = 1
    return tuple(idx)


def ell(measure: DiscreteMeasure, lagrangian: LagrangianModel, nu: float, x) -> float:
    """Discrete integral of L(x, .) against the measure, minus nu/2."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for y, w in zip(measure.points, measure.weights):
        val = lagrangian(x, y)
        if not np.isfinite(val):
            raise NumericalFailure("Lagrangian evaluation not finite", pair=(x, y))
        total += w * val
    return total - nu / 2.0


def ell_on_support(measure: DiscreteMeasure, lagrangian: LagrangianModel, nu: float) -> np.ndarray:
    return np.array([ell(measure, lagrangian, nu, p) for p in measure.points])


def grad_ell(measure: DiscreteMeasure, lagrangian: LagrangianModel, x) -> np.ndarray:
    """Gradient of ell in the first slot (nu drops out)."""
    x = np.asarray(x, dtype=float)
    m = measure.dimension
    g = np.zeros(m)
    for y, w in zip(measure.points, measure.weights):
        for k in range(m):
            g[k] += w * lagrangian.partial(x, y, _unit_index(m, k), (0,) * m)
    return g


def calibrate_nu(measure: DiscreteMeasure, lagrangian: LagrangianModel, tol: float = 1e-9) -> float:
    """nu making ell vanish on the support: twice the mean of the L-integrals.

    Raises NotCritical if the per-point integrals deviate from their mean by
    more than tol, since no single nu can then zero out ell on the support.
    """
    vals = ell_on_support(measure, lagrangian, nu=0.0)
    mean = float(np.mean(vals))
    deviation = float(np.max(np.abs(vals - mean))) if len(vals) else 0.0
    if deviation > tol:
        raise NotCritical(deviation, "support values of the L-integral are not constant")
    return 2.0 * mean


def weak_el_residual(measure: DiscreteMeasure, lagrangian: LagrangianModel, nu: float,
                     testbasis: TestBasis) -> np.ndarray:
    """Per test jet and per support point: a_i ell(x_i) + grad ell(x_i) . u_i."""
    ells = ell_on_support(measure, lagrangian, nu)
    grads = np.array([grad_ell(measure, lagrangian, p) for p in measure.points])
    out = np.zeros((len(testbasis), measure.size))
    for r, jet in enumerate(testbasis.jets):
        out[r] = jet.scalar * ells + np.einsum("ij,ij->i", grads, jet.vector)
    return out


def residual_norm(measure, lagrangian, nu, testbasis) -> float:
    res = weak_el_residual(measure, lagrangian, nu, testbasis)
    return float(np.max(np.abs(res))) if res.size else 0.0


def is_critical(measure, lagrangian, nu, tol: float = 1e-9) -> bool:
    ells = ell_on_support(measure, lagrangian, nu)
    if np.max(np.abs(ells)) > tol:
        return False
    grads = np.array([grad_ell(measure, lagrangian, p) for p in measure.points])
    return bool(np.max(np.abs(grads)) <= tol)


def require_critical(measure, lagrangian, nu, tol: float = 1e-9):
    ells = ell_on_support(measure, lagrangian, nu)
    grads = np.array([grad_ell(measure, lagrangian, p) for p in measure.points])
    dev = max(float(np.max(np.abs(ells))), float(np.max(np.abs(grads))))
    if dev > tol:
        raise NotCritical(dev)
