"""Two-point Lagrangians with a partial-derivative provider.

Two interchangeable backends are supplied:

* symbolic polynomials (exact partials via lambdified expressions), used by
  all built-in models;
* central finite differences with one Richardson step, used as the
  cross-validation oracle and as the only backend for charted models whose
  evaluator is a black box.

Partial derivatives are addressed by a pair of multi-indices (alpha on the
x slot, beta on the y slot); derivatives commute, and jets passed to the
higher operators are never differentiated.
"""

from __future__ import annotations

from itertools import product

import numpy as np
import sympy as sp

from .errors import NumericalFailure, OrderUnsupported


def _as_multi_index(alpha, m) -> tuple:
    alpha = tuple(int(k) for k in alpha)
    if len(alpha) != m or any(k < 0 for k in alpha):
        raise ValueError(f"bad multi-index {alpha} for dimension {m}")
    return alpha


class LagrangianModel:
    """Symmetric two-point function with derivatives up to ``max_order``."""

    def __init__(self, name: str, dim: int, max_order: int = 8,
                 params: dict | None = None, nonnegative: bool = False):
        self.name = name
        self.dim = dim
        self.max_order = max_order
        self.params = dict(params or {})
        self.nonnegative = nonnegative

    def __call__(self, x, y) -> float:
        raise NotImplementedError

    def partial(self, x, y, alpha, beta) -> float:
        """Mixed partial d^|alpha|_x d^|beta|_y L(x, y)."""
        raise NotImplementedError

    def _check_order(self, alpha, beta):
        total = sum(alpha) + sum(beta)
        if total > self.max_order:
            raise OrderUnsupported(
                f"{self.name}: order {total} exceeds max_order {self.max_order}")

    def evaluate_checked(self, x, y) -> float:
        val = self(x, y)
        if not np.isfinite(val):
            raise NumericalFailure(f"{self.name} non-finite at pair", pair=(np.asarray(x), np.asarray(y)))
        return float(val)


class PolynomialLagrangian(LagrangianModel):
    """Lagrangian given by a sympy expression in x0..x{m-1}, y0..y{m-1}.

    Partials are generated symbolically and cached per multi-index pair, so
    repeated evaluation inside the multilinear operators is cheap and exact.
    """

    def __init__(self, name, dim, expr, xs, ys, max_order=8, params=None, nonnegative=False):
        super().__init__(name, dim, max_order, params, nonnegative)
        self.expr = expr
        self._xs = xs
        self._ys = ys
        self._cache = {}

    def _fn(self, alpha, beta):
        key = (alpha, beta)
        fn = self._cache.get(key)
        if fn is None:
            e = self.expr
            for i, k in enumerate(alpha):
                if k:
                    e = sp.diff(e, self._xs[i], k)
            for i, k in enumerate(beta):
                if k:
                    e = sp.diff(e, self._ys[i], k)
            fn = sp.lambdify(tuple(self._xs) + tuple(self._ys), e, "numpy")
            self._cache[key] = fn
        return fn

    def __call__(self, x, y) -> float:
        zero = (0,) * self.dim
        return float(self._fn(zero, zero)(*np.asarray(x, float), *np.asarray(y, float)))

    def partial(self, x, y, alpha, beta) -> float:
        alpha = _as_multi_index(alpha, self.dim)
        beta = _as_multi_index(beta, self.dim)
        self._check_order(alpha, beta)
        return float(self._fn(alpha, beta)(*np.asarray(x, float), *np.asarray(y, float)))


def fd_step(total_order: int) -> float:
    """Step size h_k = (1e-6)^(1/(k+1)) for a derivative of total order k."""
    return (1e-6) ** (1.0 / (total_order + 1))


def _central_diff(fn, x, y, alpha, beta, h):
    """Nested central differences for the mixed partial, fixed step h."""
    slots = []
    for i, k in enumerate(alpha):
        slots.extend([(0, i)] * k)
    for i, k in enumerate(beta):
        slots.extend([(1, i)] * k)
    if not slots:
        return fn(x, y)
    (side, idx), rest = slots[0], slots[1:]
    ra = list(alpha)
    rb = list(beta)
    if side == 0:
        ra[idx] -= 1
    else:
        rb[idx] -= 1
    xp, xm = np.array(x, float), np.array(x, float)
    yp, ym = np.array(y, float), np.array(y, float)
    if side == 0:
        xp[idx] += h
        xm[idx] -= h
    else:
        yp[idx] += h
        ym[idx] -= h
    up = _central_diff(fn, xp, yp, tuple(ra), tuple(rb), h)
    dn = _central_diff(fn, xm, ym, tuple(ra), tuple(rb), h)
    return (up - dn) / (2.0 * h)


def numeric_partial(fn, x, y, alpha, beta, h=None):
    """Finite-difference mixed partial with one Richardson extrapolation step.

    The h**2 truncation term is eliminated, which makes the result exact
    (up to round-off) for polynomials of degree <= |alpha|+|beta|+3.
    """
    total = sum(alpha) + sum(beta)
    if h is None:
        h = fd_step(total)
    d_h = _central_diff(fn, x, y, tuple(alpha), tuple(beta), h)
    d_h2 = _central_diff(fn, x, y, tuple(alpha), tuple(beta), h / 2.0)
    return (4.0 * d_h2 - d_h) / 3.0


class NumericLagrangian(LagrangianModel):
    """Wraps a black-box symmetric evaluator; all partials by finite differences."""

    def __init__(self, name, dim, evaluator, max_order=4, params=None):
        super().__init__(name, dim, max_order, params)
        self._evaluator = evaluator

    def __call__(self, x, y) -> float:
        return float(self._evaluator(np.asarray(x, float), np.asarray(y, float)))

    def partial(self, x, y, alpha, beta) -> float:
        alpha = _as_multi_index(alpha, self.dim)
        beta = _as_multi_index(beta, self.dim)
        self._check_order(alpha, beta)
        return float(numeric_partial(self._evaluator, x, y, alpha, beta))


def _example52_expr(regularized: bool):
    x0, x1, y0, y1 = sp.symbols("x0 x1 y0 y1", real=True)
    expr = (x0 - y0) ** 4 + (x1 - y1) ** 2 - (x1 + y1) ** 2 * (x0 - y0) ** 2
    if regularized:
        expr = expr + x0 ** 6 + x1 ** 6 + y0 ** 6 + y1 ** 6
    return expr, (x0, x1), (y0, y1)


def _build_example52(params):
    expr, xs, ys = _example52_expr(False)
    return PolynomialLagrangian("example52", 2, expr, xs, ys, params=params)


def _build_example52_regularized(params):
    expr, xs, ys = _example52_expr(True)
    return PolynomialLagrangian("example52_regularized", 2, expr, xs, ys, params=params)


def _build_quartic_pair(params):
    dim = int(params.get("dim", 1))
    s = float(params.get("well_scale", 4.0))
    xs = sp.symbols(f"x0:{dim}", real=True)
    ys = sp.symbols(f"y0:{dim}", real=True)
    confine = lambda t: t ** 2 * (t ** 2 - s ** 2) ** 2  # sextic double-well, >= 0
    expr = sum((xs[k] - ys[k]) ** 4 + confine(xs[k]) + confine(ys[k]) for k in range(dim))
    return PolynomialLagrangian("quartic_pair", dim, expr, xs, ys,
                                params={"dim": dim, "well_scale": s}, nonnegative=True)


def _build_pair_distance(params):
    # ((x-y)^2 - d^2)^2 in 1-D: translation invariant, preferred pair distance d
    d = float(params.get("distance", 1.0))
    x0, = sp.symbols("x0:1", real=True)
    y0, = sp.symbols("y0:1", real=True)
    expr = ((x0 - y0) ** 2 - d ** 2) ** 2
    return PolynomialLagrangian("pair_distance", 1, expr, (x0,), (y0,),
                                params={"distance": d}, nonnegative=True)


def _build_cfs(params):
    from .cfs import build_cfs_lagrangian  # deferred: cfs imports this module

    return build_cfs_lagrangian(params)


REGISTRY = {
    "example52": _build_example52,
    "example52_regularized": _build_example52_regularized,
    "quartic_pair": _build_quartic_pair,
    "pair_distance": _build_pair_distance,
    "cfs": _build_cfs,
}


def build_lagrangian(name: str, params: dict | None = None) -> LagrangianModel:
    try:
        builder = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown Lagrangian model {name!r}, have {sorted(REGISTRY)}") from None
    return builder(dict(params or {}))


def symmetry_defect(lag: LagrangianModel, rng, n_probes=1000, scale=1.0) -> float:
    """Max |L(x,y) - L(y,x)| / (1 + |L|) over random probe pairs."""
    worst = 0.0
    for _ in range(n_probes):
        x = rng.uniform(-scale, scale, size=lag.dim)
        y = rng.uniform(-scale, scale, size=lag.dim)
        a, b = lag(x, y), lag(y, x)
        worst = max(worst, abs(a - b) / (1.0 + abs(a)))
    return worst


def derivative_defect(lag: LagrangianModel, rng, max_total=3, n_probes=25, scale=0.8) -> float:
    """Max relative gap between analytic partials and the finite-difference oracle."""
    worst = 0.0
    m = lag.dim
    indices = [idx for idx in product(range(max_total + 1), repeat=2 * m)
               if 1 <= sum(idx) <= max_total]
    for _ in range(n_probes):
        x = rng.uniform(-scale, scale, size=m)
        y = rng.uniform(-scale, scale, size=m)
        for idx in indices:
            alpha, beta = idx[:m], idx[m:]
            ana = lag.partial(x, y, alpha, beta)
            num = numeric_partial(lambda a, b: lag(a, b), x, y, alpha, beta)
            worst = max(worst, abs(ana - num) / (1.0 + abs(ana)))
    return worst
