"""Reference convex bodies: analytic ellipsoids, harmonic perturbations of
spheres, and a rejection sampler for random origin-symmetric convex bodies.
Used to manufacture densities with known solutions and to feed the checkers."""

from __future__ import annotations

import numpy as np

from .geometry import convexity_margin, tau_field
from .grid import ScalarField, SphericalGrid, SymTensorField, symmetrize_even

__all__ = [
    "ellipsoid_support",
    "ellipsoid_tau",
    "ellipsoid_density",
    "harmonic_support",
    "random_even_convex",
]


def ellipsoid_support(grid: SphericalGrid, axes) -> ScalarField:
    """Support function sqrt(a^2 x1^2 + b^2 x2^2 + c^2 x3^2) of an ellipsoid."""
    a, b, c = axes
    x = grid.points3d()
    q = np.array([a * a, b * b, c * c])
    return ScalarField(grid, np.sqrt(np.einsum("ijk,k,ijk->ij", x, q, x)))


def ellipsoid_tau(grid: SphericalGrid, axes) -> SymTensorField:
    """Closed-form tau (reverse Weingarten map) of the ellipsoid.

    For the 1-homogeneous extension sbar(y) = sqrt(y.Q y) the spherical
    tau[s] equals the ambient Hessian of sbar restricted to the tangent
    plane: M = Q/s - (Qx)(Qx)^T/s^3, with frame components e_a . M e_b.
    """
    a, b, c = axes
    q = np.array([a * a, b * b, c * c])
    x = grid.points3d()
    s = np.sqrt(np.einsum("ijk,k,ijk->ij", x, q, x))
    qx = x * q[None, None, :]
    e_t, e_p = grid.frame3d()

    def entry(u, v):
        return (np.einsum("ijk,k,ijk->ij", u, q, v) / s
                - np.einsum("ijk,ijk->ij", u, qx) * np.einsum("ijk,ijk->ij", v, qx) / s ** 3)

    return SymTensorField(grid, np.stack([entry(e_t, e_t), entry(e_t, e_p), entry(e_p, e_p)]))


def ellipsoid_density(grid: SphericalGrid, axes, p: float, k: int = 1) -> ScalarField:
    """Density f for which the ellipsoid solves sigma_n/sigma_{n-k}(tau) = s^(p-1) f.

    Evaluated from the closed-form tau, so it carries no discretization error.
    """
    if k != 1:
        raise ValueError("only n = 2, k = 1 is implemented")
    t = ellipsoid_tau(grid, axes)
    s = ellipsoid_support(grid, axes)
    raw = t.det() / t.trace()
    return ScalarField(grid, raw / s.values ** (p - 1.0))


def harmonic_support(grid: SphericalGrid, r0: float, coeffs) -> ScalarField:
    """Support candidate r0 * (1 + sum a_lm Y_lm) from real harmonic coefficients.

    coeffs is an iterable of (l, m, a_lm); only even degrees l keep the field
    origin-symmetric, odd degrees are rejected.
    """
    vals = np.ones((grid.n_theta, grid.n_phi))
    for l, m, a in coeffs:
        if l % 2 != 0:
            raise ValueError(f"odd harmonic degree l={l} breaks origin symmetry")
        vals = vals + a * grid.real_harmonic(l, m).values
    return symmetrize_even(ScalarField(grid, r0 * vals))


def random_even_convex(
    grid: SphericalGrid,
    rng: np.random.Generator,
    r0: float = 1.0,
    amplitude: float = 0.12,
    degrees=(2, 4),
    min_margin: float = 0.05,
    max_tries: int = 200,
) -> ScalarField:
    """Rejection-sample an even, strictly convex support function.

    Draws Gaussian coefficients on the even harmonics of the given degrees and
    rejects candidates whose tau eigenvalues fall below min_margin * r0.
    """
    for _ in range(max_tries):
        coeffs = []
        for l in degrees:
            for m in range(-l, l + 1):
                coeffs.append((l, m, amplitude * rng.standard_normal() / (1 + l)))
        s = harmonic_support(grid, r0, coeffs)
        if s.min() > 0.2 * r0 and convexity_margin(s) > min_margin * r0:
            return s
    raise RuntimeError("rejection sampling failed; lower amplitude or min_margin")
