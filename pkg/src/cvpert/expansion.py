"""Order-by-order perturbation driver.

The jets w^(p) solve Delta w^(p) = -E^(p), where E^(1) is the dual lift of
Delta_0 and, for p >= 2, E^(p) sums Delta_l over all ordered compositions
q_1 + ... + q_l = p with l >= 2.  Every composition term is recorded in a
diagram ledger (the expansion only produces tree diagrams, so the exported
document is a forest).

Evaluating the series at lambda pushes the base measure forward with the
accumulated log-weight and shift fields; lambda itself is only the
book-keeping parameter of the formal series.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import linops
from .errors import ArgError, LedgerMissing, NotCritical, NotLinearized
from .jets import DualJet, Jet, TestBasis
from .lagrangian import LagrangianModel
from .measure import DiscreteMeasure, push_forward

SLOPE_BAND = 0.2  # acceptance band on fitted exponents, next-order contamination
RESIDUAL_FLOOR = 1e-14


def compositions(p: int, ell: int) -> list[tuple]:
    """All ordered tuples (q_1..q_ell) of positive integers with sum p.

    Lexicographic order; the count is C(p-1, ell-1).
    """
    if ell < 1 or ell > p:
        raise ArgError(f"need 1 <= ell <= p, got ell={ell}, p={p}")
    out = []
    for cuts in combinations(range(1, p), ell - 1):
        bounds = (0,) + cuts + (p,)
        out.append(tuple(bounds[k + 1] - bounds[k] for k in range(ell)))
    return out


@dataclass
class LedgerTerm:
    order: int
    ell: int
    composition: tuple
    dual: DualJet

    def to_json(self) -> dict:
        return {
            "ell": self.ell,
            "composition": list(self.composition),
            "norm": self.dual.norm(),
        }


@dataclass
class DiagramLedger:
    """Per order: the Delta_l composition terms making up E^(p)."""

    terms: dict = field(default_factory=dict)

    def add(self, term: LedgerTerm):
        self.terms.setdefault(term.order, []).append(term)

    def order_sum(self, p: int, n_points: int, dim: int) -> DualJet:
        total = DualJet.zero(n_points, dim)
        for term in self.terms.get(p, []):
            total = total + term.dual
        return total

    def to_json(self) -> dict:
        return {
            str(p): [t.to_json() for t in terms]
            for p, terms in sorted(self.terms.items())
        }


@dataclass
class Inhomogeneity:
    """Prescribed jets v^(1..P) describing a perturbation of the vacuum."""

    jets: list

    @classmethod
    def zero(cls, order: int, n_points: int, dim: int) -> "Inhomogeneity":
        return cls([Jet.zero(n_points, dim) for _ in range(order)])


@dataclass
class PerturbationSeries:
    """Ordered jets w^(1..P) over a base measure, plus the diagram ledger.

    ``range_defects`` logs, per order, the relative norm of the error-term
    component outside range(Delta) that permissive mode projected away.
    """

    base: DiscreteMeasure
    order: int
    nu: float
    jets: list
    convention: str = "standard"
    gauge_offsets: list | None = None
    ledger: DiagramLedger | None = None
    range_defects: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "nu": float(self.nu),
            "convention": self.convention,
            "base": self.base.to_json(),
            "jets": [{"c": [float(v) for v in j.scalar],
                      "F": [[float(v) for v in row] for row in j.vector]}
                     for j in self.jets],
        }

    @classmethod
    def from_json(cls, data) -> "PerturbationSeries":
        base = DiscreteMeasure.from_json(data["base"])
        jets = [Jet(np.array(j["c"]), np.array(j["F"])) for j in data["jets"]]
        return cls(base, int(data["order"]), float(data["nu"]), jets,
                   convention=data.get("convention", "standard"))


def error_term(p: int, jets_so_far: list, measure: DiscreteMeasure,
               lagrangian: LagrangianModel, nu: float,
               convention: str = "standard",
               ledger: DiagramLedger | None = None) -> DualJet:
    """E^(p) as a dual jet; records each composition term in the ledger."""
    if p < 1:
        raise ArgError("order must be >= 1")
    if p == 1:
        dual = linops.delta_zero_dual(measure, lagrangian, nu)
        if ledger is not None:
            ledger.add(LedgerTerm(1, 0, (), dual))
        return dual
    if len(jets_so_far) < p - 1:
        raise ArgError(f"E^({p}) needs jets w^(1..{p - 1})")
    total = DualJet.zero(measure.size, measure.dimension)
    for ell in range(2, p + 1):
        for comp in compositions(p, ell):
            args = [jets_so_far[q - 1] for q in comp]
            dual = linops.delta_ell_dual(ell, args, measure, lagrangian, nu, convention)
            total = total + dual
            if ledger is not None:
                ledger.add(LedgerTerm(p, ell, comp, dual))
    return total


def _zero_jets(inhom: Inhomogeneity | None, order, n, m) -> list:
    if inhom is None:
        return [Jet.zero(n, m) for _ in range(order)]
    if len(inhom.jets) < order:
        return list(inhom.jets) + [Jet.zero(n, m) for _ in range(order - len(inhom.jets))]
    return list(inhom.jets[:order])


def expand_inhomogeneous(measure: DiscreteMeasure, lagrangian: LagrangianModel,
                         nu: float, order: int,
                         inhom: Inhomogeneity | None = None,
                         gauge_offsets: list | None = None,
                         convention: str = "standard",
                         strict: bool = False,
                         tol_rank: float = linops.TOL_RANK,
                         keep_ledger: bool = True) -> PerturbationSeries:
    """Iterative solve w^(p) = v^(p) + S^(p) (E^(p) + Delta v^(p)).

    With a zero inhomogeneity this reduces bit-identically to the plain
    expansion w^(p) = S^(p) E^(p).  In permissive mode (strict=False) the
    component of the right-hand side outside range(Delta) is projected away.
    """
    n, m = measure.size, measure.dimension
    delta = linops.assemble_delta(measure, lagrangian, nu, convention=convention)
    vjets = _zero_jets(inhom, order, n, m)
    offsets = gauge_offsets or [None] * order
    ledger = DiagramLedger() if keep_ledger else None
    greens = linops.GreensOperator(delta, tol_rank=tol_rank, strict=strict)
    jets: list[Jet] = []
    defects: list[float] = []
    for p in range(1, order + 1):
        E = error_term(p, jets, measure, lagrangian, nu, convention, ledger)
        v = vjets[p - 1]
        rhs = E + delta.apply(v)
        correction, defect = greens.apply(rhs)
        defects.append(defect)
        w = v + correction
        if offsets[p - 1] is not None:
            w = w + offsets[p - 1]
        jets.append(w)
    return PerturbationSeries(measure, order, nu, jets, convention,
                              gauge_offsets=offsets, ledger=ledger,
                              range_defects=defects)


def expand(measure, lagrangian, nu, order, gauge_offsets=None,
           convention="standard", strict=False, tol_rank=linops.TOL_RANK,
           keep_ledger=True) -> PerturbationSeries:
    """Order-by-order expansion w^(p) = S^(p) E^(p) (+ optional gauge offsets)."""
    return expand_inhomogeneous(measure, lagrangian, nu, order, inhom=None,
                                gauge_offsets=gauge_offsets, convention=convention,
                                strict=strict, tol_rank=tol_rank,
                                keep_ledger=keep_ledger)


def family_from_linearized(w1: Jet, measure, lagrangian, nu, order,
                           tol_rank=linops.TOL_RANK, tol_critical=1e-9,
                           convention="standard", strict=False,
                           keep_ledger=True) -> PerturbationSeries:
    """One-parameter family of solutions whose first variation is w1.

    Requires an exactly critical base and w1 in ker Delta; higher orders
    follow the plain recursion starting at p = 2 (Delta_0 and Delta_1[w1]
    both vanish).
    """
    d0 = linops.delta_zero_dual(measure, lagrangian, nu)
    if d0.norm() > tol_critical:
        raise NotCritical(d0.norm(), "family construction needs a critical base")
    delta = linops.assemble_delta(measure, lagrangian, nu, convention=convention)
    dw1 = delta.apply(w1)
    scale = delta.operator_norm() * max(w1.norm(), 1.0)
    if dw1.norm() > tol_rank * max(scale, 1.0):
        raise NotLinearized(
            f"|Delta w1| = {dw1.norm():.3e} exceeds {tol_rank:.1e} * {scale:.3e}")
    ledger = DiagramLedger() if keep_ledger else None
    jets = [w1]
    greens = linops.GreensOperator(delta, tol_rank=tol_rank, strict=strict)
    for p in range(2, order + 1):
        E = error_term(p, jets, measure, lagrangian, nu, convention, ledger)
        w, _ = greens.apply(E)
        jets.append(w)
    return PerturbationSeries(measure, order, nu, jets, convention, ledger=ledger)


def reconstruct(series: PerturbationSeries, lam: float) -> DiscreteMeasure:
    """Evaluate the series: push the base forward with the lambda-weighted jets."""
    if not np.isfinite(lam):
        raise ArgError("lambda must be finite")
    if lam == 0.0 or not series.jets:
        return series.base
    n, m = series.base.size, series.base.dimension
    log_w = np.zeros(n)
    shift = np.zeros((n, m))
    for p, jet in enumerate(series.jets, start=1):
        log_w += lam ** p * jet.scalar
        shift += lam ** p * jet.vector
    return push_forward(series.base, log_w, shift)


def residual_slope(series: PerturbationSeries, measure, lagrangian, nu,
                   testbasis: TestBasis | None, lam_grid) -> tuple:
    """Fitted exponent of the weak EL residual of reconstruct(lambda).

    ``measure`` must be the expansion base of the series.  Returns
    (slope, max log-fit residual); (inf, 0.0) when the residuals sit below
    the degeneracy floor (exactly critical series).
    """
    from .el import residual_norm
    from .fitting import loglog_slope

    if measure is not None and measure.fingerprint() != series.base.fingerprint():
        raise ArgError("measure does not match the series base")
    lam_grid = np.asarray(lam_grid, dtype=float)
    vals = []
    for lam in lam_grid:
        rho = reconstruct(series, lam)
        tb = testbasis if testbasis is not None and testbasis.jets[0].size == rho.size \
            else TestBasis.full(rho.size, rho.dimension)
        vals.append(residual_norm(rho, lagrangian, nu, tb))
    return loglog_slope(lam_grid, np.array(vals), floor=RESIDUAL_FLOOR)


def export_diagrams(series: PerturbationSeries) -> dict:
    """Ledger as a JSON forest: one node per order, composition leaves below."""
    if series.ledger is None:
        raise LedgerMissing("series was built without ledger retention")
    forest = []
    for p in sorted(series.ledger.terms):
        terms = series.ledger.terms[p]
        if p == 1:
            forest.append({"p": 1, "source": "Delta_0",
                           "norm": terms[0].dual.norm() if terms else 0.0})
        else:
            forest.append({
                "p": p,
                "children": [t.to_json() for t in terms],
            })
    return {"tree_diagrams_only": True, "orders": forest}


def order_scaling_slope(base: DiscreteMeasure, lagrangian, nu, deviation: Jet,
                        order: int, lam_grid, strict=False,
                        convention="standard") -> tuple:
    """Fitted decay exponent of the residual left after an order-P correction.

    For each lambda the base is pushed along lambda * deviation, expanded to
    the requested order around that start, and the fully corrected measure's
    weak EL residual is measured.  A correct order-P scheme leaves a
    residual O(lambda^(P+1)).  Returns (slope, residual table).
    """
    from .el import residual_norm

    lam_grid = np.asarray(lam_grid, dtype=float)
    rows = []
    for lam in lam_grid:
        start = push_forward(base, lam * deviation.scalar, lam * deviation.vector)
        series = expand(start, lagrangian, nu, order, strict=strict,
                        convention=convention, keep_ledger=False)
        corrected = reconstruct(series, 1.0)
        tb = TestBasis.full(corrected.size, corrected.dimension)
        rows.append((float(lam), residual_norm(corrected, lagrangian, nu, tb)))
    from .fitting import loglog_slope

    slope, fit_res = loglog_slope(lam_grid, np.array([r[1] for r in rows]),
                                  floor=RESIDUAL_FLOOR)
    return slope, rows
