"""Numerical experiments for the high-frequency limit of Helmholtz equations
with two point sources: exact Gaussian-atom fields, resolvent solutions,
Wigner pairings, ray measures and norm functionals."""

from .model import FieldExpr, Scenario, reference_scenario

__all__ = ["FieldExpr", "Scenario", "reference_scenario"]
__version__ = "0.1.0"
