"""Multilinear operators Delta_l, the linearized operator as a matrix, and
Green's operators.

Delta_l applies l factors of (scalar-at-x + scalar-at-y + derivative-at-x +
derivative-at-y) to the Lagrangian, divided by l!, minus the nu-term.  The
expansion enumerates all 4^l slot assignments directly; jets are never
differentiated, so each assignment is a plain mixed directional derivative
of L weighted by scalar jet values.

Two conventions are supported.  "standard" carries the scalar component on
both slots plus the nu-term; "breve" drops the x-slot scalar and the
nu-term (the weight function divided out of the EL equations).  At a
critical measure the two linearized operators coincide.

The assembled DeltaMatrix stores the weight-multiplied bilinear form
B[(i,s),(j,t)] = w_i * <unit jet (i,s), Delta unit jet (j,t)>(x_i)
in point-major layout (scalar slot, then m vector slots), which is exactly
the second variation of the action and therefore symmetric in the standard
convention.  Green's operators are min-norm pseudo-inverses with the sign
convention Delta S v = -v; non-uniqueness is exposed via an optional kernel
offset added to every solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import OutOfRange, ShapeError
from .jets import DualJet, Jet, TestBasis
from .lagrangian import LagrangianModel
from .measure import DiscreteMeasure

TOL_RANK = 1e-8
TOL_SOLVE = 1e-8


def _unit(m, k):
    idx = [0] * m
    idx[k] = 1
    return tuple(idx)


def mixed_directional(lag: LagrangianModel, x, y, xdirs, ydirs) -> float:
    """Directional derivative of L contracting xdirs on the x slot, ydirs on y.

    Enumerates coordinate assignments directly; fine for small dimension and
    total order <= max_order.
    """
    m = lag.dim
    total = 0.0
    for ii in product(range(m), repeat=len(xdirs)):
        for jj in product(range(m), repeat=len(ydirs)):
            coeff = 1.0
            alpha = [0] * m
            beta = [0] * m
            for k, a in enumerate(ii):
                coeff *= xdirs[k][a]
                alpha[a] += 1
            for k, b in enumerate(jj):
                coeff *= ydirs[k][b]
                beta[b] += 1
            if coeff == 0.0:
                continue
            total += coeff * lag.partial(x, y, tuple(alpha), tuple(beta))
    return total


def delta_zero(measure: DiscreteMeasure, lagrangian: LagrangianModel, nu: float) -> np.ndarray:
    """Delta_0 = ell on the support."""
    from .el import ell_on_support

    return ell_on_support(measure, lagrangian, nu)


def delta_zero_dual(measure, lagrangian, nu) -> DualJet:
    """Delta_0 lifted to a dual jet: (value, spatial gradient) per point."""
    from .el import ell_on_support, grad_ell

    vals = ell_on_support(measure, lagrangian, nu)
    grads = np.array([grad_ell(measure, lagrangian, p) for p in measure.points])
    return DualJet(vals, grads)


def _delta_ell_terms(order, jets, measure, lagrangian, nu, convention, with_gradient):
    """Shared core for delta_ell / delta_ell_breve and their dual lifts."""
    if order < 1:
        raise ShapeError("order must be >= 1")
    for w in jets:
        if w.size != measure.size or w.dimension != measure.dimension:
            raise ShapeError("jet shapes do not match the measure support")
    if len(jets) != order:
        raise ShapeError(f"need {order} jets, got {len(jets)}")
    # factor options: 0 scalar at x, 1 scalar at y, 2 derivative at x, 3 at y;
    # breve drops the x-slot scalar option
    options = (1, 2, 3) if convention == "breve" else (0, 1, 2, 3)
    n, m = measure.size, measure.dimension
    vals = np.zeros(n)
    grads = np.zeros((n, m)) if with_gradient else None
    units = [np.eye(m)[k] for k in range(m)]
    for i in range(n):
        xi = measure.points[i]
        for j in range(n):
            yj = measure.points[j]
            wj = measure.weights[j]
            acc_v = 0.0
            acc_g = np.zeros(m) if with_gradient else None
            for opts in product(options, repeat=order):
                scal = 1.0
                xdirs = []
                ydirs = []
                for k, o in enumerate(opts):
                    jet = jets[k]
                    if o == 0:
                        scal *= jet.scalar[i]
                    elif o == 1:
                        scal *= jet.scalar[j]
                    elif o == 2:
                        xdirs.append(jet.vector[i])
                    else:
                        ydirs.append(jet.vector[j])
                if scal == 0.0:
                    continue
                acc_v += scal * mixed_directional(lagrangian, xi, yj, xdirs, ydirs)
                if with_gradient:
                    for g in range(m):
                        acc_g[g] += scal * mixed_directional(
                            lagrangian, xi, yj, xdirs + [units[g]], ydirs)
            vals[i] += wj * acc_v
            if with_gradient:
                grads[i] += wj * acc_g
        if convention == "standard":
            cprod = 1.0
            for w in jets:
                cprod *= w.scalar[i]
            vals[i] -= nu / 2.0 * cprod
    fact = math.factorial(order)
    vals /= fact
    if with_gradient:
        grads /= fact
        return vals, grads
    return vals


def delta_ell(order, jets, measure, lagrangian, nu) -> np.ndarray:
    """Delta_l[w_1..w_l] on the support, standard convention (with nu-term)."""
    return _delta_ell_terms(order, jets, measure, lagrangian, nu, "standard", False)


def delta_ell_breve(order, jets, measure, lagrangian) -> np.ndarray:
    """Breve variant: no scalar action on the x slot and no nu-term."""
    return _delta_ell_terms(order, jets, measure, lagrangian, 0.0, "breve", False)


def delta_ell_dual(order, jets, measure, lagrangian, nu, convention="standard") -> DualJet:
    """Delta_l lifted to a dual jet (value and x-gradient per point).

    The gradient differentiates only the Lagrangian arguments; the nu-term
    is constant in x since jets are never differentiated.
    """
    vals, grads = _delta_ell_terms(order, jets, measure, lagrangian, nu, convention, True)
    return DualJet(vals, grads)


@dataclass
class DeltaMatrix:
    """Weight-multiplied bilinear form of the linearized operator.

    ``matrix`` is square of size N(1+m) when assembled against the full test
    space; with a restricted test basis the rectangular test-row form is
    stored in ``test_rows`` (rows grouped basis-jet major, point minor).
    """

    matrix: np.ndarray
    nu: float
    weights: np.ndarray
    dim: int
    convention: str = "standard"
    measure_fingerprint: str = ""
    test_rows: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[1]

    def weight_vector(self) -> np.ndarray:
        return np.repeat(self.weights, 1 + self.dim)

    def apply(self, jet: Jet) -> DualJet:
        """Pointwise dual jet of Delta applied to the jet (weights divided out)."""
        out = self.matrix @ jet.flatten()
        return DualJet.unflatten(out / self.weight_vector(), self.dim)

    def symmetry_defect(self) -> float:
        scale = max(1.0, float(np.max(np.abs(self.matrix))))
        return float(np.max(np.abs(self.matrix - self.matrix.T))) / scale

    def operator_norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    def to_json(self) -> dict:
        return {
            "shape": list(self.matrix.shape),
            "rows": [[float(v) for v in row] for row in self.matrix],
            "nu": float(self.nu),
            "convention": self.convention,
            "measure_fingerprint": self.measure_fingerprint,
            "layout": "point-major: scalar then vector slots, rows weight-multiplied",
        }

    def singular_value_report(self) -> list:
        s = np.linalg.svd(self.matrix, compute_uv=False)
        return [float(v) for v in s]

    def singular_values_csv(self, path):
        import csv

        s = self.singular_value_report()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "singular_value"])
            writer.writerows(enumerate(s))


def _pointwise_blocks(measure, lagrangian, nu, convention):
    """Unweighted pointwise row blocks of the linearized operator."""
    n, m = measure.size, measure.dimension
    pts, wts = measure.points, measure.weights
    L = np.empty((n, n))
    D1 = np.empty((n, n, m))
    D2 = np.empty((n, n, m))
    D11 = np.empty((n, n, m, m))
    D12 = np.empty((n, n, m, m))
    zero = (0,) * m
    for i in range(n):
        for j in range(n):
            L[i, j] = lagrangian(pts[i], pts[j])
            for a in range(m):
                D1[i, j, a] = lagrangian.partial(pts[i], pts[j], _unit(m, a), zero)
                D2[i, j, a] = lagrangian.partial(pts[i], pts[j], zero, _unit(m, a))
                for b in range(a, m):
                    ab = [0] * m
                    ab[a] += 1
                    ab[b] += 1
                    D11[i, j, a, b] = D11[i, j, b, a] = lagrangian.partial(pts[i], pts[j], tuple(ab), zero)
                for b in range(m):
                    D12[i, j, a, b] = lagrangian.partial(pts[i], pts[j], _unit(m, a), _unit(m, b))
    ells = L @ wts - nu / 2.0
    gsum = np.einsum("j,ija->ia", wts, D1)
    hsum = np.einsum("j,ijab->iab", wts, D11)
    A = np.zeros((n * (1 + m), n * (1 + m)))
    for i in range(n):
        for j in range(n):
            blk = np.zeros((1 + m, 1 + m))
            if convention == "standard":
                blk[0, 0] = (ells[i] if i == j else 0.0) + wts[j] * L[i, j]
                blk[1:, 0] = (gsum[i] if i == j else 0.0) + wts[j] * D1[i, j]
            else:  # breve: x-slot scalar of the argument jet does not act
                blk[0, 0] = wts[j] * L[i, j]
                blk[1:, 0] = wts[j] * D1[i, j]
            blk[0, 1:] = (gsum[i] if i == j else 0.0) + wts[j] * D2[i, j]
            blk[1:, 1:] = (hsum[i] if i == j else 0.0) + wts[j] * D12[i, j]
            A[i * (1 + m):(i + 1) * (1 + m), j * (1 + m):(j + 1) * (1 + m)] = blk
    return A


def assemble_delta(measure: DiscreteMeasure, lagrangian: LagrangianModel, nu: float,
                   testbasis: TestBasis | None = None,
                   convention: str = "standard") -> DeltaMatrix:
    """Assemble the linearized operator as a finite bilinear form.

    Rows are test directions, weight-multiplied so the standard form is the
    symmetric second variation of the action; columns run over the full jet
    space.  A restricted (non-full) test basis additionally stores the
    contracted rectangular row form.
    """
    if lagrangian.max_order < 2:
        from .errors import OrderUnsupported

        raise OrderUnsupported("assembling Delta needs second derivatives")
    A = _pointwise_blocks(measure, lagrangian, nu, convention)
    n, m = measure.size, measure.dimension
    W = np.repeat(measure.weights, 1 + m)
    B = W[:, None] * A
    test_rows = None
    if testbasis is not None and not testbasis.full_space:
        rows = []
        for jet in testbasis.jets:
            sel = jet.flatten()
            for i in range(n):
                block = sel[i * (1 + m):(i + 1) * (1 + m)]
                rows.append(block @ B[i * (1 + m):(i + 1) * (1 + m), :])
        test_rows = np.array(rows)
    return DeltaMatrix(B, nu, measure.weights.copy(), m, convention,
                       measure.fingerprint(), test_rows)


@dataclass
class KernelBasis:
    """Orthonormal jets spanning ker Delta within tol_rank."""

    jets: list
    singular_values: np.ndarray
    tol_rank: float

    def __len__(self):
        return len(self.jets)

    def to_json(self) -> dict:
        return {
            "count": len(self.jets),
            "singular_values": [float(s) for s in self.singular_values],
            "tol_rank": self.tol_rank,
            "jets": [{"c": [float(v) for v in j.scalar],
                      "F": [[float(v) for v in row] for row in j.vector]} for j in self.jets],
        }


def kernel_basis(delta: DeltaMatrix, tol_rank: float = TOL_RANK) -> KernelBasis:
    """Orthonormal kernel basis from the SVD, threshold tol_rank * sigma_max."""
    M = delta.test_rows if delta.test_rows is not None else delta.matrix
    u, s, vt = np.linalg.svd(M)
    smax = s[0] if len(s) else 0.0
    cut = tol_rank * smax
    null = [vt[k] for k in range(M.shape[1]) if k >= len(s) or s[k] <= cut]
    jets = [Jet.unflatten(v, delta.dim) for v in null]
    return KernelBasis(jets, s, tol_rank)


@dataclass
class GreensOperator:
    """Min-norm pseudo-inverse of Delta with the sign convention S = -Delta^+.

    Non-uniqueness of Green's operators is exposed through ``kernel_offset``:
    a jet added to every solve (adding kernel elements yields every other
    Green's operator).  ``strict`` raises OutOfRange when the requested dual
    jet has a component outside range(Delta); otherwise that component is
    projected away and reported.
    """

    delta: DeltaMatrix
    tol_rank: float = TOL_RANK
    tol_solve: float = TOL_SOLVE
    strict: bool = False
    kernel_offset: Jet | None = None
    gauge_policy: str = "min-norm"
    _svd: tuple = field(init=False, repr=False, default=None)

    def __post_init__(self):
        M = self.delta.test_rows if self.delta.test_rows is not None else self.delta.matrix
        u, s, vt = np.linalg.svd(M, full_matrices=False)
        cut = self.tol_rank * (s[0] if len(s) else 0.0)
        rank = int(np.sum(s > cut))
        self._svd = (u[:, :rank], s[:rank], vt[:rank])
        if self.kernel_offset is not None:
            self.gauge_policy = "min-norm+offset"

    def _rhs(self, dual: DualJet, testbasis: TestBasis | None = None) -> np.ndarray:
        """Weight-multiplied dual vector matching the row convention."""
        vec = self.delta.weight_vector() * dual.flatten()
        if self.delta.test_rows is None:
            return vec
        if testbasis is None:
            raise ShapeError("restricted DeltaMatrix solves need the test basis")
        n, m = len(self.delta.weights), self.delta.dim
        rows = []
        for jet in testbasis.jets:
            sel = jet.flatten()
            for i in range(n):
                rows.append(sel[i * (1 + m):(i + 1) * (1 + m)]
                            @ vec[i * (1 + m):(i + 1) * (1 + m)])
        return np.array(rows)

    def apply(self, dual: DualJet, testbasis: TestBasis | None = None):
        """Solve Delta w = -dual (min-norm); returns (jet, out-of-range residual)."""
        rhs = -self._rhs(dual, testbasis)
        u, s, vt = self._svd
        proj = u @ (u.T @ rhs)
        resid = float(np.linalg.norm(rhs - proj))
        scale = float(np.linalg.norm(rhs))
        rel = resid / scale if scale > 0 else 0.0
        if self.strict and rel > self.tol_solve:
            raise OutOfRange(rel)
        w = vt.T @ ((u.T @ rhs) / s) if len(s) else np.zeros(self.delta.size)
        jet = Jet.unflatten(w, self.delta.dim)
        if self.kernel_offset is not None:
            jet = jet + self.kernel_offset
        return jet, rel


def greens_apply(greens: GreensOperator, dual: DualJet) -> Jet:
    """Apply the Green's operator; strict mode raises OutOfRange."""
    jet, _ = greens.apply(dual)
    return jet
