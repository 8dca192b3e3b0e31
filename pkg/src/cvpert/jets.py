"""Jets and dual jets on the support of a discrete measure.

A jet assigns to every support point a scalar (weight change) and a vector
(point displacement).  A dual jet assigns a scalar and a covector; the
pairing is pointwise.  Flattened vectors use point-major layout: for point i
the block [scalar, vector_1 .. vector_m].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class Jet:
    """Per-point pair (scalar a_i, vector u_i in R^m)."""

    scalar: np.ndarray
    vector: np.ndarray

    def __post_init__(self):
        self.scalar = np.asarray(self.scalar, dtype=float).ravel()
        self.vector = np.atleast_2d(np.asarray(self.vector, dtype=float))
        if len(self.scalar) != len(self.vector):
            raise ShapeError("scalar and vector parts must have equal length")
        if not (np.all(np.isfinite(self.scalar)) and np.all(np.isfinite(self.vector))):
            raise ShapeError("non-finite jet entries")

    @classmethod
    def zero(cls, n_points: int, dim: int) -> "Jet":
        return cls(np.zeros(n_points), np.zeros((n_points, dim)))

    @property
    def size(self) -> int:
        return len(self.scalar)

    @property
    def dimension(self) -> int:
        return self.vector.shape[1]

    def flatten(self) -> np.ndarray:
        return np.hstack([self.scalar[:, None], self.vector]).ravel()

    @classmethod
    def unflatten(cls, vec, dim: int) -> "Jet":
        arr = np.asarray(vec, dtype=float).reshape(-1, 1 + dim)
        return cls(arr[:, 0].copy(), arr[:, 1:].copy())

    def norm(self) -> float:
        """Sup norm over the support (max of |a_i| and |u_i| entries)."""
        if self.size == 0:
            return 0.0
        return float(max(np.max(np.abs(self.scalar)), np.max(np.abs(self.vector))))

    def __add__(self, other: "Jet") -> "Jet":
        return Jet(self.scalar + other.scalar, self.vector + other.vector)

    def __sub__(self, other: "Jet") -> "Jet":
        return Jet(self.scalar - other.scalar, self.vector - other.vector)

    def __mul__(self, factor: float) -> "Jet":
        return Jet(self.scalar * factor, self.vector * factor)

    __rmul__ = __mul__


@dataclass
class DualJet:
    """Per-point pair (scalar g_i, covector phi_i); pairs pointwise with jets."""

    value: np.ndarray
    gradient: np.ndarray

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float).ravel()
        self.gradient = np.atleast_2d(np.asarray(self.gradient, dtype=float))
        if len(self.value) != len(self.gradient):
            raise ShapeError("value and gradient parts must have equal length")

    @classmethod
    def zero(cls, n_points: int, dim: int) -> "DualJet":
        return cls(np.zeros(n_points), np.zeros((n_points, dim)))

    @property
    def size(self) -> int:
        return len(self.value)

    def flatten(self) -> np.ndarray:
        return np.hstack([self.value[:, None], self.gradient]).ravel()

    @classmethod
    def unflatten(cls, vec, dim: int) -> "DualJet":
        arr = np.asarray(vec, dtype=float).reshape(-1, 1 + dim)
        return cls(arr[:, 0].copy(), arr[:, 1:].copy())

    def norm(self) -> float:
        if self.size == 0:
            return 0.0
        return float(max(np.max(np.abs(self.value)), np.max(np.abs(self.gradient))))

    def __add__(self, other: "DualJet") -> "DualJet":
        return DualJet(self.value + other.value, self.gradient + other.gradient)

    def __mul__(self, factor: float) -> "DualJet":
        return DualJet(self.value * factor, self.gradient * factor)

    __rmul__ = __mul__


def pairing(dual: DualJet, jet: Jet) -> np.ndarray:
    """Pointwise dual pairing g_i a_i + phi_i . u_i."""
    if dual.size != jet.size or dual.gradient.shape != jet.vector.shape:
        raise ShapeError("dual jet and jet shapes do not match")
    return dual.value * jet.scalar + np.einsum("ij,ij->i", dual.gradient, jet.vector)


class TestBasis:
    """A list of jets spanning the test space.

    ``full_space`` marks the canonical basis of the whole jet space; the
    scalar component is then nowhere trivial, mirroring the requirement that
    test jets can scale the weight at every point.
    """

    def __init__(self, jets: list[Jet], full_space: bool = False):
        if not jets:
            raise ShapeError("test basis needs at least one jet")
        n, m = jets[0].size, jets[0].dimension
        for j in jets:
            if j.size != n or j.dimension != m:
                raise ShapeError("inconsistent jet shapes in test basis")
        gram = np.array([[float(a.flatten() @ b.flatten()) for b in jets] for a in jets])
        if np.linalg.matrix_rank(gram, tol=1e-12 * max(1.0, np.max(np.abs(gram)))) < len(jets):
            raise ShapeError("test basis jets are linearly dependent")
        if full_space:
            scal = np.array([j.scalar for j in jets])
            if np.any(np.max(np.abs(scal), axis=0) == 0.0):
                raise ShapeError("full test space must have a nonzero scalar at every point")
        self.jets = jets
        self.full_space = full_space

    @classmethod
    def full(cls, n_points: int, dim: int) -> "TestBasis":
        jets = []
        for i in range(n_points):
            a = np.zeros(n_points)
            a[i] = 1.0
            jets.append(Jet(a, np.zeros((n_points, dim))))
            for k in range(dim):
                u = np.zeros((n_points, dim))
                u[i, k] = 1.0
                jets.append(Jet(np.zeros(n_points), u))
        return cls(jets, full_space=True)

    def __len__(self) -> int:
        return len(self.jets)


@dataclass
class MultiJet:
    """Subsystem-indexed jet: one Jet per subsystem index a = 1..L."""

    jets: list

    def __post_init__(self):
        if not self.jets:
            raise ShapeError("multi-jet needs at least one subsystem")
        n, m = self.jets[0].size, self.jets[0].dimension
        for j in self.jets:
            if j.size != n or j.dimension != m:
                raise ShapeError("inconsistent subsystem jet shapes")

    @property
    def n_subsystems(self) -> int:
        return len(self.jets)

    @property
    def size(self) -> int:
        return self.jets[0].size

    @property
    def dimension(self) -> int:
        return self.jets[0].dimension

    @classmethod
    def zero(cls, n_subsystems: int, n_points: int, dim: int) -> "MultiJet":
        return cls([Jet.zero(n_points, dim) for _ in range(n_subsystems)])

    def flatten(self) -> np.ndarray:
        return np.concatenate([j.flatten() for j in self.jets])

    @classmethod
    def unflatten(cls, vec, n_subsystems: int, dim: int) -> "MultiJet":
        parts = np.split(np.asarray(vec, dtype=float), n_subsystems)
        return cls([Jet.unflatten(p, dim) for p in parts])

    def norm(self) -> float:
        return max(j.norm() for j in self.jets)

    def __add__(self, other: "MultiJet") -> "MultiJet":
        return MultiJet([a + b for a, b in zip(self.jets, other.jets)])

    def __mul__(self, factor: float) -> "MultiJet":
        return MultiJet([j * factor for j in self.jets])

    __rmul__ = __mul__
