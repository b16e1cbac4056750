"""Support-function convex geometry.

Provides tau[s] = hess s + s g (whose eigenvalues are the principal radii of
curvature), elementary symmetric polynomials, the normalized curvature
quotient F(T) = (binom(n,k) * sigma_n/sigma_{n-k})^(1/k) together with its
matrix derivative F^ij, the embedding map x -> s(x) x + grad s(x), and
convexity diagnostics.  Field-level operations are specialized to n = 2
(surfaces in R^3, hence k = 1); the scalar helpers accept general n.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import NotInCone
from .grid import ScalarField, SphericalGrid, SymTensorField, covariant_gradient, covariant_hessian

__all__ = [
    "RadiiField",
    "CurvatureEval",
    "tau_field",
    "elementary_symmetric",
    "principal_radii",
    "curvature_quotient",
    "embed",
    "convexity_margin",
    "support_from_points",
]

# Relative eigenvalue gap below which the divided-difference form of the
# F^ij coefficient switches to its analytic limit (umbilic points).
_UMBILIC_GAP = 1e-10


def elementary_symmetric(lam, m: int) -> float:
    """m-th elementary symmetric polynomial of the entries of lam (sigma_0 = 1)."""
    lam = np.asarray(lam, dtype=float)
    n = lam.size
    if not 0 <= m <= n:
        raise ValueError(f"degree m={m} out of range for {n} eigenvalues")
    e = np.zeros(m + 1)
    e[0] = 1.0
    for x in lam:
        e[1 : m + 1] += x * e[0:m].copy()
    return float(e[m])


def quotient_value(lam, k: int, normalized: bool = True) -> float:
    """(sigma_n / sigma_{n-k})^(1/k) of the eigenvalue vector, optionally
    normalized so the value at (1, ..., 1) is 1."""
    lam = np.asarray(lam, dtype=float)
    n = lam.size
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n")
    q = elementary_symmetric(lam, n) / elementary_symmetric(lam, n - k)
    if normalized:
        q *= comb(n, k)
    return float(q ** (1.0 / k))


def quotient_gradient(lam, k: int) -> np.ndarray:
    """dF/d(lambda_i) for the normalized quotient F, general n."""
    lam = np.asarray(lam, dtype=float)
    n = lam.size
    f = quotient_value(lam, k)
    grad = np.empty(n)
    sig_n = elementary_symmetric(lam, n)
    sig_nk = elementary_symmetric(lam, n - k)
    for i in range(n):
        rest = np.delete(lam, i)
        d_n = elementary_symmetric(rest, n - 1)
        d_nk = elementary_symmetric(rest, n - k - 1)
        grad[i] = f / k * (d_n / sig_n - d_nk / sig_nk)
    return grad


def _eig2x2(t11, t12, t22):
    """Sorted eigenvalues of the symmetric 2x2 field; returns (lam1, lam2)."""
    mean = 0.5 * (t11 + t22)
    radius = np.sqrt(np.maximum(0.25 * (t11 - t22) ** 2 + t12 ** 2, 0.0))
    return mean - radius, mean + radius


@dataclass(frozen=True)
class RadiiField:
    """Principal radii of curvature per node, sorted ascending."""

    grid: SphericalGrid
    lam: np.ndarray  # shape (2, n_theta, n_phi), lam[0] <= lam[1]

    def min(self) -> float:
        return float(self.lam[0].min())

    def max(self) -> float:
        return float(self.lam[1].max())


@dataclass(frozen=True)
class CurvatureEval:
    """Curvature quotient value, its matrix derivative and the sigma values."""

    F_value: ScalarField
    F_matrix: SymTensorField
    sigma: np.ndarray          # shape (n, n_theta, n_phi): sigma_1 .. sigma_n
    k: int

    @property
    def raw_quotient(self) -> np.ndarray:
        """Unnormalized sigma_n / sigma_{n-k} per node."""
        n = self.sigma.shape[0]
        num = self.sigma[n - 1]
        den = self.sigma[n - self.k - 1] if self.k < n else np.ones_like(num)
        return num / den


def tau_field(s: ScalarField) -> SymTensorField:
    """tau[s] = hess s + s * I in the orthonormal frame."""
    hess = covariant_hessian(s)
    comps = hess.components.copy()
    comps[0] += s.values
    comps[2] += s.values
    return SymTensorField(s.grid, comps)


def principal_radii(t: SymTensorField) -> RadiiField:
    """Per-node sorted eigenvalues of the frame tensor."""
    lam1, lam2 = _eig2x2(t.t11, t.t12, t.t22)
    return RadiiField(t.grid, np.stack([lam1, lam2]))


def curvature_quotient(t: SymTensorField, k: int) -> CurvatureEval:
    """Normalized curvature quotient F and derivative F^ij of a 2x2 tensor field.

    F(T) = (binom(n,k) sigma_n/sigma_{n-k})^(1/k) with n = 2, so F(I) = 1 and
    F is 1-homogeneous.  Raises NotInCone if T is not positive definite at
    every node (strict convexity is required for ellipticity).
    """
    if k != 1:
        raise ValueError("field-level quotient implemented for n = 2, k = 1 only")
    lam1, lam2 = _eig2x2(t.t11, t.t12, t.t22)
    lam_min = float(lam1.min())
    if lam_min <= 0.0:
        raise NotInCone(
            f"tensor not positive definite (min eigenvalue {lam_min:.3e})",
            min_eigenvalue=lam_min,
        )
    sig1 = lam1 + lam2
    sig2 = lam1 * lam2
    f = 2.0 * sig2 / sig1

    # dF/dlam_i = 2 * lam_other^2 / sig1^2; assemble F^ij = a I + b (T - mean I)
    # via the symmetric divided difference b = (f2 - f1)/(lam2 - lam1), with the
    # analytic limit -2/sig1 at (near-)umbilic nodes.
    f1 = 2.0 * lam2 ** 2 / sig1 ** 2
    f2 = 2.0 * lam1 ** 2 / sig1 ** 2
    gap = lam2 - lam1
    near = gap < _UMBILIC_GAP * np.maximum(np.abs(lam2), np.abs(lam1))
    b = np.where(near, -2.0 / sig1, (f2 - f1) / np.where(near, 1.0, gap))
    a = 0.5 * (f1 + f2)
    mean = 0.5 * sig1
    f11 = a + b * (t.t11 - mean)
    f12 = b * t.t12
    f22 = a + b * (t.t22 - mean)

    return CurvatureEval(
        F_value=ScalarField(t.grid, f),
        F_matrix=SymTensorField(t.grid, np.stack([f11, f12, f22])),
        sigma=np.stack([sig1, sig2]),
        k=k,
    )


def convexity_margin(s: ScalarField) -> float:
    """min over nodes of the smallest eigenvalue of tau[s]; > 0 iff strictly convex."""
    return principal_radii(tau_field(s)).min()


def embed(s: ScalarField, warn: bool = True) -> np.ndarray:
    """Embedding x -> s(x) x + grad s(x); returns points of shape (nt, np, 3).

    Emits a warning (does not fail) when tau[s] is not positive definite,
    since the map is only guaranteed to parametrize a hypersurface on the
    strictly convex cone.
    """
    margin = convexity_margin(s)
    if margin <= 0.0 and warn:
        import warnings

        warnings.warn(
            f"embedding a non-convex field (tau margin {margin:.3e})",
            RuntimeWarning,
            stacklevel=2,
        )
    grad = covariant_gradient(s)
    x = s.grid.points3d()
    e_t, e_p = s.grid.frame3d()
    return s.values[..., None] * x + grad[0][..., None] * e_t + grad[1][..., None] * e_p


def support_from_points(points: np.ndarray, grid: SphericalGrid) -> ScalarField:
    """Discrete support function max_y <y, x> of a point cloud, sampled at grid nodes."""
    cloud = points.reshape(-1, 3)
    normals = grid.points3d().reshape(-1, 3)
    vals = np.max(normals @ cloud.T, axis=1)
    return ScalarField(grid, vals.reshape(grid.n_theta, grid.n_phi))
