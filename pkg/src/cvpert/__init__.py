"""Perturbation theory for critical points of causal variational principles
on discrete measures."""

from .measure import DiscreteMeasure, push_forward
from .jets import Jet, DualJet, MultiJet, TestBasis, pairing
from .lagrangian import LagrangianModel, PolynomialLagrangian, NumericLagrangian, build_lagrangian
from .el import ell, calibrate_nu, weak_el_residual

__version__ = "0.1.0"

__all__ = [
    "DiscreteMeasure", "push_forward",
    "Jet", "DualJet", "MultiJet", "TestBasis", "pairing",
    "LagrangianModel", "PolynomialLagrangian", "NumericLagrangian", "build_lagrangian",
    "ell", "calibrate_nu", "weak_el_residual",
]
