"""Finite-dimensional causal fermion systems.

Points are Hermitian f x f operators with n positive and n negative
eigenvalues and fixed trace.  The spin space is realized concretely as
C^(2n) with signature diag(1_n, -1_n); the spin adjoint of a map
psi: C^f -> C^(2n) is psi* = psi^dagger S.  Wave evaluation operators are
built by eigendecomposition so that x = -Psi(x)* Psi(x), with negative
eigenvalues occupying the +1 signature slots.

The causal Lagrangian is evaluated from the closed chain
A_xy = P(x,y) P(y,x), whose eigenvalues coincide with those of the
operator product xy; the 2n x 2n chain is better conditioned than the
f x f product.  The kappa = 0 part is computed through the
quarter-sum-of-squared-differences identity, which keeps it non-negative
by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (NumericalFailure, ShapeError, SingularChart,
                     VanishingLocalTrace)
from .lagrangian import NumericLagrangian

TOL_EIG_REL = 1e-10


@dataclass(frozen=True)
class CfsParams:
    """Hilbert dimension, spin dimension, local trace, boundedness multiplier."""

    hilbert_dim: int
    spin_dim: int
    trace_constant: float
    kappa: float = 0.0

    def __post_init__(self):
        if self.hilbert_dim < 2 * self.spin_dim:
            raise ShapeError("need hilbert_dim >= 2 * spin_dim")
        if self.trace_constant <= 0:
            raise ShapeError("trace constant must be positive")
        if self.kappa < 0:
            raise ShapeError("kappa must be non-negative")

    @property
    def f(self) -> int:
        return self.hilbert_dim

    @property
    def n(self) -> int:
        return self.spin_dim


def signature_matrix(n: int) -> np.ndarray:
    return np.diag(np.concatenate([np.ones(n), -np.ones(n)])).astype(complex)


def spin_adjoint(psi: np.ndarray, n: int) -> np.ndarray:
    """psi* = psi^dagger S: maps the signed spin space back to C^f."""
    return psi.conj().T @ signature_matrix(n)


def validate_cfs_point(x: np.ndarray, params: CfsParams, tol_herm: float = 1e-12,
                       tol_trace: float = 1e-10) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    f, n = params.f, params.n
    if x.shape != (f, f):
        raise ShapeError(f"expected an {f} x {f} matrix")
    scale = max(1.0, float(np.max(np.abs(x))))
    if np.max(np.abs(x - x.conj().T)) > tol_herm * scale:
        raise ShapeError("point is not self-adjoint within tolerance")
    evals = np.linalg.eigvalsh(x)
    tol_eig = TOL_EIG_REL * scale
    n_pos = int(np.sum(evals > tol_eig))
    n_neg = int(np.sum(evals < -tol_eig))
    if (n_pos, n_neg) != (n, n):
        raise ShapeError(f"signature ({n_pos}, {n_neg}) differs from ({n}, {n})")
    if abs(np.trace(x).real - params.trace_constant) > tol_trace * scale:
        raise ShapeError("trace constraint violated")
    return x


def spin_map_from_point(x: np.ndarray, n: int) -> np.ndarray:
    """Psi(x) with -Psi(x)* Psi(x) = x, from the eigendecomposition.

    The n most negative eigenvalues fill the +1 signature slots, the n most
    positive ones the -1 slots (the spin scalar product is -<u|xu>).
    """
    x = np.asarray(x, dtype=complex)
    evals, evecs = np.linalg.eigh(x)
    rows = []
    for k in range(n):  # ascending order: most negative first
        rows.append(np.sqrt(abs(evals[k])) * evecs[:, k].conj())
    for k in range(x.shape[0] - n, x.shape[0]):
        rows.append(np.sqrt(abs(evals[k])) * evecs[:, k].conj())
    return np.array(rows)


def kernel(psi_x: np.ndarray, psi_y: np.ndarray, n: int) -> np.ndarray:
    """Kernel of the fermionic projector P(x, y) = -Psi(x) Psi(y)*."""
    return -psi_x @ spin_adjoint(psi_y, n)


def closed_chain(psi_x: np.ndarray, psi_y: np.ndarray, n: int) -> np.ndarray:
    return kernel(psi_x, psi_y, n) @ kernel(psi_y, psi_x, n)


@dataclass
class WaveEvaluation:
    """Per support point: the spin map Psi(x_i)."""

    params: CfsParams
    maps: list

    @classmethod
    def from_points(cls, points, params: CfsParams) -> "WaveEvaluation":
        return cls(params, [spin_map_from_point(p, params.n) for p in points])

    def point(self, i: int) -> np.ndarray:
        """Reconstruct the operator: x = -Psi(x)* Psi(x)."""
        psi = self.maps[i]
        return -(spin_adjoint(psi, self.params.n) @ psi)

    def kernel(self, i: int, j: int) -> np.ndarray:
        return kernel(self.maps[i], self.maps[j], self.params.n)


def spectral_weights(x: np.ndarray, y: np.ndarray, n: int):
    """Eigenvalues of the closed chain and the two spectral weights.

    Returns (eigenvalues with algebraic multiplicity, |xy|, |(xy)^2|).
    """
    psi_x = spin_map_from_point(np.asarray(x, complex), n)
    psi_y = spin_map_from_point(np.asarray(y, complex), n)
    try:
        eigs = np.linalg.eigvals(closed_chain(psi_x, psi_y, n))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("eigenvalue solver failed on the closed chain") from exc
    order = np.lexsort((eigs.imag, eigs.real, -np.abs(eigs)))
    eigs = eigs[order]
    mods = np.abs(eigs)
    return eigs, float(np.sum(mods)), float(np.sum(mods ** 2))


def causal_lagrangian(x: np.ndarray, y: np.ndarray, params: CfsParams,
                      tol_class: float = 1e-10):
    """L_kappa(x, y) and the causal class of the pair.

    The kappa = 0 part uses (1/4n) sum_ij (|l_i| - |l_j|)^2, which vanishes
    exactly when all moduli agree (spacelike separation).
    """
    n = params.n
    eigs, w1, w2 = spectral_weights(x, y, n)
    mods = np.abs(eigs)
    quarter = float(sum((a - b) ** 2 for a in mods for b in mods)) / (4.0 * n)
    value = quarter + params.kappa * w1 ** 2
    spread = float(np.max(mods) - np.min(mods)) if len(mods) else 0.0
    cls = "spacelike" if spread <= tol_class * max(1.0, float(np.max(mods, initial=0.0))) \
        else "timelike"
    return value, cls


def causal_action(points, weights, params: CfsParams):
    """Double weighted sums: (action of the kappa = 0 part, boundedness T)."""
    S = 0.0
    T = 0.0
    maps = [spin_map_from_point(np.asarray(p, complex), params.n) for p in points]
    n = params.n
    for i, wi in enumerate(weights):
        for j, wj in enumerate(weights):
            try:
                eigs = np.linalg.eigvals(closed_chain(maps[i], maps[j], n))
            except np.linalg.LinAlgError as exc:
                raise NumericalFailure("eigenvalue solver failed") from exc
            mods = np.abs(eigs)
            quarter = float(sum((a - b) ** 2 for a in mods for b in mods)) / (4.0 * n)
            S += wi * wj * quarter
            T += wi * wj * float(np.sum(mods)) ** 2
    return S, T


def local_correlation(psi: np.ndarray, params: CfsParams,
                      tol: float = 1e-12) -> np.ndarray:
    """R(psi) = c psi* psi / tr(psi* psi), trace exactly the trace constant."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (2 * params.n, params.f):
        raise ShapeError(f"expected a {2 * params.n} x {params.f} spin map")
    M = spin_adjoint(psi, params.n) @ psi
    t = float(np.trace(M).real)
    scale = max(1.0, float(np.linalg.norm(psi) ** 2))
    if abs(t) <= tol * scale:
        raise VanishingLocalTrace(f"tr(psi* psi) = {t:.3e}")
    R = (params.trace_constant / t) * M
    # distribute the floating-point trace defect so the constraint is exact
    defect = (np.trace(R).real - params.trace_constant) / params.f
    R = R - defect * np.eye(params.f)
    return R


@dataclass
class CfsChart:
    """Chart around a point x = R(psi0): inverts R on the affine slice psi0 + E.

    The default slice is the orthogonal complement (trace pairing on real
    and imaginary parts) of the kernel of DR at psi0: complex scalings of
    psi0 and local unitary rotations A psi0.  The condition number of the
    restricted differential is reported; a rank-deficient restriction
    raises SingularChart.
    """

    params: CfsParams
    psi0: np.ndarray
    basis: list = None
    tol_rank: float = 1e-10
    condition: float = field(init=False, default=np.inf)

    def __post_init__(self):
        self.psi0 = np.asarray(self.psi0, dtype=complex)
        if self.basis is None:
            self.basis = self._default_basis()
        self._jac = self._differential_matrix()
        s = np.linalg.svd(self._jac, compute_uv=False)
        if s[-1] <= self.tol_rank * s[0]:
            raise SingularChart("restricted differential is rank deficient",
                                condition=float(s[0] / max(s[-1], 1e-300)))
        object.__setattr__(self, "condition", float(s[0] / s[-1]))

    @property
    def dim(self) -> int:
        return len(self.basis)

    @staticmethod
    def _vec(mat) -> np.ndarray:
        return np.concatenate([mat.real.ravel(), mat.imag.ravel()])

    def _kernel_directions(self) -> list:
        n2, f = self.psi0.shape
        dirs = [self.psi0, 1j * self.psi0]
        for a in range(n2):
            dirs.append(1j * np.eye(n2)[:, [a]] @ np.eye(n2)[[a], :] @ self.psi0)
            for b in range(a + 1, n2):
                E_ab = np.zeros((n2, n2), dtype=complex)
                E_ab[a, b] = 1.0
                dirs.append((E_ab - E_ab.T) @ self.psi0)
                dirs.append(1j * (E_ab + E_ab.T) @ self.psi0)
        return dirs

    def _default_basis(self) -> list:
        n2, f = self.psi0.shape
        dim_real = 2 * n2 * f
        K = np.array([self._vec(d) for d in self._kernel_directions()])
        u, s, vt = np.linalg.svd(K, full_matrices=True)
        rank = int(np.sum(s > 1e-12 * s[0]))
        comp = vt[rank:]
        basis = []
        for row in comp:
            re = row[:n2 * f].reshape(n2, f)
            im = row[n2 * f:].reshape(n2, f)
            basis.append(re + 1j * im)
        return basis

    def _dR(self, e: np.ndarray) -> np.ndarray:
        """Derivative of R at psi0 along the (real) direction e."""
        psi = self.psi0
        n = self.params.n
        M = spin_adjoint(psi, n) @ psi
        t = np.trace(M).real
        dM = spin_adjoint(e, n) @ psi + spin_adjoint(psi, n) @ e
        dt = np.trace(dM).real
        c = self.params.trace_constant
        return (c / t) * dM - (c * dt / t ** 2) * M

    def _differential_matrix(self) -> np.ndarray:
        cols = [self._vec(self._dR(e)) for e in self.basis]
        return np.array(cols).T

    def point(self, coords) -> np.ndarray:
        """Forward chart map: R(psi0 + sum z_a e_a)."""
        coords = np.asarray(coords, dtype=float)
        psi = self.psi0 + sum(z * e for z, e in zip(coords, self.basis))
        return local_correlation(psi, self.params)

    def coords(self, y: np.ndarray, x0=None, tol: float = 1e-10) -> np.ndarray:
        """Inverse chart map by least squares on the matrix residual."""
        from scipy.optimize import least_squares

        y = np.asarray(y, dtype=complex)
        start = np.zeros(self.dim) if x0 is None else np.asarray(x0, dtype=float)

        def resid(z):
            return self._vec(self.point(z) - y)

        sol = least_squares(resid, start, xtol=3e-16, ftol=3e-16, gtol=3e-16)
        if np.linalg.norm(sol.fun) > tol * max(1.0, np.linalg.norm(self._vec(y))):
            raise SingularChart(
                f"chart inversion did not converge, residual {np.linalg.norm(sol.fun):.3e}",
                condition=self.condition)
        return sol.x


def perturb_wave_evaluation(weo: WaveEvaluation, deltas, weights):
    """Rescaled push-forward of the perturbed wave evaluation operator.

    Each spin map is shifted, the local correlation operators are rescaled
    to the fixed trace, and the new points are validated.  Returns the list
    of operators plus the unchanged weights.
    """
    params = weo.params
    new_points = []
    for psi, delta in zip(weo.maps, deltas):
        psi_hat = psi + np.asarray(delta, dtype=complex)
        point = local_correlation(psi_hat, params)
        validate_cfs_point(point, params)
        new_points.append(point)
    return new_points, np.asarray(weights, dtype=float).copy()


def build_cfs_lagrangian(params: dict) -> NumericLagrangian:
    """Registry bridge: the causal Lagrangian in the chart of a reference
    system, with finite-difference derivatives only."""
    p = CfsParams(int(params.get("hilbert_dim", 2)), int(params.get("spin_dim", 1)),
                  float(params.get("trace_constant", 1.0)),
                  float(params.get("kappa", 0.0)))
    chart = params.get("chart")
    if chart is None:
        x_ref = reference_point(p)
        chart = CfsChart(p, spin_map_from_point(x_ref, p.n))
    evaluator = lambda za, zb: causal_lagrangian(chart.point(za), chart.point(zb), p)[0]
    lag = NumericLagrangian("cfs", chart.dim, evaluator,
                            max_order=int(params.get("max_order", 3)),
                            params={"hilbert_dim": p.f, "spin_dim": p.n,
                                    "trace_constant": p.trace_constant,
                                    "kappa": p.kappa})
    lag.chart = chart
    lag.cfs_params = p
    return lag


def reference_point(params: CfsParams, spread: float = 0.25) -> np.ndarray:
    """Deterministic valid point: diag(c + b, -b) padded with zeros."""
    f, n, c = params.f, params.n, params.trace_constant
    pos = [c / n + spread * (k + 1) for k in range(n)]
    neg = [-spread * (k + 1) for k in range(n)]
    diag = np.zeros(f)
    diag[:n] = pos
    diag[n:2 * n] = neg
    return np.diag(diag).astype(complex)


def swap_symmetric_pair(params: CfsParams, b: float = 0.25):
    """Two unitarily equivalent diagonal points exchanged by the flip matrix.

    The pair is spacelike separated and invariant under diagonal phase
    conjugation, which protects every off-diagonal chart direction: the
    weak EL equations hold exactly in the symmetry-protected test space.
    """
    if params.f != 2 or params.n != 1:
        raise ShapeError("the two-point toy needs f = 2, n = 1")
    c = params.trace_constant
    x1 = np.diag([c + b, -b]).astype(complex)
    flip = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    x2 = flip @ x1 @ flip
    return x1, x2


def point_to_json(x: np.ndarray) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(x, complex)]


def point_from_json(data) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in data])


def system_to_json(params: CfsParams, points, weights) -> dict:
    return {
        "params": {"hilbert_dim": params.f, "spin_dim": params.n,
                   "trace_constant": params.trace_constant, "kappa": params.kappa},
        "points": [point_to_json(p) for p in points],
        "weights": [float(w) for w in weights],
    }
