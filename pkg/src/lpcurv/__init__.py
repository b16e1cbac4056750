"""Solver and verification toolkit for the prescribed L_p curvature equation
sigma_n/sigma_{n-k}(hess s + s g) = s^(p-1) f on the unit sphere, posed for the
support function s of an origin-symmetric strictly convex body."""

from .grid import (
    SphericalGrid,
    ScalarField,
    SymTensorField,
    covariant_gradient,
    covariant_hessian,
    laplacian,
    symmetrize_even,
    integrate,
    evenness_defect,
)

__all__ = [
    "SphericalGrid",
    "ScalarField",
    "SymTensorField",
    "covariant_gradient",
    "covariant_hessian",
    "laplacian",
    "symmetrize_even",
    "integrate",
    "evenness_defect",
]

__version__ = "0.1.0"
