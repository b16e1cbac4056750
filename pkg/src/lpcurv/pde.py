"""Residuals, linearization and the Newton continuation solver for the
auxiliary curvature equation

    F(hess s + v g) = s^q f / v,        q = (p - 1)/k + 1,

with F the normalized curvature quotient.  The main prescribed-curvature
equation sigma_n/sigma_{n-k}(tau[s]) = s^(p-1) f is recovered by feeding the
derived density g_aux = (binom(n,k) f)^(1/k) through the outer fixed-point
map (see the homotopy module): at a fixed point v = s the auxiliary equation
collapses to F(tau[s]) = s^(q-1) g_aux, which is the main equation raised to
the power 1/k.

The linearized operator  L eta = F^ij eta_;ij - q s^(q-1) (f/v) eta  has a
strictly negative zeroth-order coefficient, so it is invertible; it is solved
matrix-free by GMRES preconditioned with a longitude-averaged operator that is
block diagonal across Fourier modes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, gmres, lgmres

from .errors import ConeExit, LinearSolveFailure, MaxStepsExceeded, NotInCone
from .geometry import _eig2x2, curvature_quotient
from .grid import ScalarField, SphericalGrid, SymTensorField, _hessian_arrays, evenness_defect

logger = logging.getLogger("lpcurv")

__all__ = [
    "ProblemSpec",
    "SolverConfig",
    "AuxState",
    "SolveTrace",
    "TraceRecord",
    "main_residual",
    "aux_residual",
    "linearized_operator",
    "AuxLinearOperator",
    "solve_auxiliary",
]


@dataclass(frozen=True)
class ProblemSpec:
    """Problem data (n, k, p, f) plus derived exponents and auxiliary density.

    Only n = 2 (so k = 1) is implemented.  f must be positive and even; it is
    symmetrized exactly at grid level on construction.  The guarantee regime
    is 1 < p < k + 1, equivalently q = (p-1)/k + 1 in (1, 2).
    """

    grid: SphericalGrid
    p: float
    f: ScalarField
    k: int = 1
    n: int = 2

    def __post_init__(self):
        if self.n != 2 or self.k != 1:
            raise ValueError("only n = 2, k = 1 is implemented")
        if self.f.grid is not self.grid:
            raise ValueError("f must live on the problem grid")
        if self.f.min() <= 0.0:
            raise ValueError("f must be positive everywhere")
        defect = evenness_defect(self.f)
        if defect > 1e-10 * self.f.max():
            raise ValueError(f"f must be even (defect {defect:.3e})")
        from .grid import symmetrize_even

        object.__setattr__(self, "f", symmetrize_even(self.f))

    @property
    def q(self) -> float:
        return (self.p - 1.0) / self.k + 1.0

    @property
    def guarantee_regime(self) -> bool:
        return 1.0 < self.p < self.k + 1.0

    @property
    def g_aux(self) -> ScalarField:
        """Auxiliary density (binom(n,k) f)^(1/k) fed to the fixed-point map."""
        c = comb(self.n, self.k)
        return ScalarField(self.grid, (c * self.f.values) ** (1.0 / self.k))


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and continuation schedule for the auxiliary Newton solver.

    Convergence of a Newton solve is declared at residual sup-norm below
    max(newton_tol, newton_rtol * max(1, sup |s^q f/v|) * (n_theta/64)^2 for
    grids beyond 64); the grid factor tracks the round-off floor of spectral
    differentiation.  After convergence, polish_steps extra full Newton steps
    push the residual to its quadratic floor, which makes the solution map
    smooth enough for the outer fixed-point iteration to converge tightly.
    """

    newton_tol: float = 1e-12
    newton_rtol: float = 1e-9
    max_newton_iters: int = 40
    polish_steps: int = 1
    t_init_step: float = 1.0
    t_min_step: float = 1e-4
    ls_shrink: float = 0.5
    ls_min_alpha: float = 1e-4
    krylov_rtol: float = 1e-11
    krylov_restart: int = 40
    krylov_maxiter: int = 12
    krylov_accept: float = 1e-8
    dense_fallback_max: int = 4608


@dataclass(frozen=True)
class AuxState:
    """Solver state for the auxiliary equation: iterate, coefficient, path position."""

    s: ScalarField
    v: ScalarField
    t: float
    residual_norm: float


@dataclass
class TraceRecord:
    phase: str
    t: float
    iteration: int
    residual: float
    margin: float
    alpha: float = 1.0
    note: str = ""


@dataclass
class SolveTrace:
    """Per-step diagnostics accumulated by the solvers."""

    records: list = field(default_factory=list)
    newton_steps: int = 0
    linear_solves: int = 0
    aux_solves: int = 0

    def add(self, **kw):
        self.records.append(TraceRecord(**kw))

    def summary(self) -> dict:
        res = [r.residual for r in self.records]
        return {
            "records": len(self.records),
            "newton_steps": self.newton_steps,
            "linear_solves": self.linear_solves,
            "aux_solves": self.aux_solves,
            "final_residual": res[-1] if res else None,
        }


# -- residuals ---------------------------------------------------------------


def main_residual(s: ScalarField, spec: ProblemSpec) -> ScalarField:
    """Raw main-equation residual sigma_n/sigma_{n-k}(tau[s]) - s^(p-1) f."""
    from .geometry import tau_field

    ce = curvature_quotient(tau_field(s), spec.k)
    return ScalarField(s.grid, ce.raw_quotient - s.values ** (spec.p - 1.0) * spec.f.values)


def _tau_v(s_vals: np.ndarray, v_vals: np.ndarray, grid: SphericalGrid) -> SymTensorField:
    h11, h12, h22 = _hessian_arrays(grid, s_vals)
    return SymTensorField(grid, np.stack([h11 + v_vals, h12, h22 + v_vals]))


def aux_residual(state: AuxState, spec: ProblemSpec, f_t: ScalarField) -> ScalarField:
    """Auxiliary residual F(hess s + v g) - s^q f_t / v (normalized F)."""
    grid = spec.grid
    ce = curvature_quotient(_tau_v(state.s.values, state.v.values, grid), spec.k)
    rhs = state.s.values ** spec.q * f_t.values / state.v.values
    return ScalarField(grid, ce.F_value.values - rhs)


# -- linearized operator -----------------------------------------------------


class _ModePreconditioner:
    """Longitude-averaged linearization, factored per Fourier mode.

    Block m of the averaged operator is
        diag(F11m) d2th_m + diag(F22m) (-m^2/sin^2 proj_m + cot dth_m) - diag(zm)
    with F11m, F22m, zm the phi-means of the true coefficients; Fourier modes
    beyond the resolvable band see only the (diagonal) zeroth-order term.
    """

    def __init__(self, grid: SphericalGrid, f11m, f22m, zm):
        sht = grid._sht()
        self.grid = grid
        m2 = (np.arange(grid.mmax + 1, dtype=float) ** 2)[:, None, None]
        isin2 = (1.0 / grid.sin_theta ** 2)[None, :, None]
        cot = grid._cache["cot_t"][None, :, None]
        blocks = (
            f11m[None, :, None] * sht["d2th"]
            + f22m[None, :, None] * (-m2 * isin2 * sht["proj"] + cot * sht["dth"])
        )
        blocks = blocks - np.diag(zm)[None, :, :]
        self._lu = [lu_factor(blocks[m]) for m in range(grid.mmax + 1)]
        self._zm = zm

    def apply(self, r_flat: np.ndarray) -> np.ndarray:
        grid = self.grid
        rhat = np.fft.rfft(r_flat.reshape(grid.n_theta, grid.n_phi), axis=1).T.copy()
        for m in range(grid.mmax + 1):
            rhat[m] = lu_solve(self._lu[m], rhat[m])
        rhat[grid.mmax + 1 :] /= -self._zm[None, :]
        return np.fft.irfft(rhat.T, n=grid.n_phi, axis=1).ravel()


class AuxLinearOperator:
    """The discrete operator eta -> sum_ij F^ij eta_;ij - q s^(q-1) (f_t/v) eta.

    This is the exact Jacobian of the discrete auxiliary residual with respect
    to nodal values of s.  Exposes a matrix-free action plus a solve method
    (preconditioned GMRES with dense fallback on small grids).
    """

    def __init__(self, grid: SphericalGrid, f_matrix: SymTensorField, zeroth: np.ndarray):
        self.grid = grid
        self.f11 = f_matrix.t11
        self.f12 = f_matrix.t12
        self.f22 = f_matrix.t22
        self.zeroth = zeroth
        self._precond = None

    @property
    def shape(self):
        return (self.grid.size, self.grid.size)

    def apply(self, eta: np.ndarray) -> np.ndarray:
        """Action on a nodal array of shape (n_theta, n_phi)."""
        h11, h12, h22 = _hessian_arrays(self.grid, eta)
        return self.f11 * h11 + 2.0 * self.f12 * h12 + self.f22 * h22 - self.zeroth * eta

    def apply_field(self, eta: ScalarField) -> ScalarField:
        return ScalarField(self.grid, self.apply(eta.values))

    def matvec(self, flat: np.ndarray) -> np.ndarray:
        return self.apply(flat.reshape(self.grid.n_theta, self.grid.n_phi)).ravel()

    def as_scipy(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.matvec, dtype=float)

    def materialize(self, max_size: int = 4608) -> np.ndarray:
        """Dense matrix of the operator (small grids only)."""
        n = self.grid.size
        if n > max_size:
            raise LinearSolveFailure(f"refusing to materialize {n}x{n} dense operator")
        cols = np.eye(n)
        out = np.empty((n, n))
        for j in range(n):
            out[:, j] = self.matvec(cols[:, j])
        return out

    def _preconditioner(self) -> _ModePreconditioner:
        if self._precond is None:
            self._precond = _ModePreconditioner(
                self.grid,
                self.f11.mean(axis=1),
                self.f22.mean(axis=1),
                self.zeroth.mean(axis=1),
            )
        return self._precond

    def solve(self, rhs: np.ndarray, cfg: SolverConfig | None = None) -> np.ndarray:
        """Solve L eta = rhs for a nodal array rhs; returns a nodal array."""
        cfg = cfg or SolverConfig()
        b = rhs.ravel()
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return np.zeros_like(rhs)
        a_op = self.as_scipy()
        m_op = LinearOperator(self.shape, matvec=self._preconditioner().apply, dtype=float)
        x, _ = gmres(
            a_op, b, rtol=cfg.krylov_rtol, atol=0.0,
            restart=cfg.krylov_restart, maxiter=cfg.krylov_maxiter, M=m_op,
        )
        rel = float(np.linalg.norm(a_op.matvec(x) - b)) / bnorm
        if rel > cfg.krylov_accept:
            x, _ = lgmres(a_op, b, x0=x, M=m_op, rtol=cfg.krylov_rtol, atol=0.0, maxiter=400)
            rel = float(np.linalg.norm(a_op.matvec(x) - b)) / bnorm
        if rel > cfg.krylov_accept:
            if self.grid.size <= cfg.dense_fallback_max:
                logger.warning("Krylov stalled (rel %.2e); dense fallback", rel)
                x = np.linalg.solve(self.materialize(cfg.dense_fallback_max), b)
            else:
                raise LinearSolveFailure(
                    f"linear solve stalled at relative residual {rel:.3e}"
                )
        return x.reshape(rhs.shape)


def linearized_operator(state: AuxState, spec: ProblemSpec, f_t: ScalarField) -> AuxLinearOperator:
    """Exact Jacobian of aux_residual at the given state (see AuxLinearOperator)."""
    grid = spec.grid
    ce = curvature_quotient(_tau_v(state.s.values, state.v.values, grid), spec.k)
    zeroth = spec.q * state.s.values ** (spec.q - 1.0) * f_t.values / state.v.values
    return AuxLinearOperator(grid, ce.F_matrix, zeroth)


# -- Newton + continuation ---------------------------------------------------


class _NewtonFailed(Exception):
    def __init__(self, reason: str, cone: bool = False):
        super().__init__(reason)
        self.cone = cone


def _sym(grid: SphericalGrid, vals: np.ndarray) -> np.ndarray:
    c = grid._cache
    return 0.5 * (vals + vals[c["antipode_i"], c["antipode_j"]])


def _eval(grid: SphericalGrid, s_vals, v_vals, f_t_vals, q):
    """Residual, cone margin and curvature data at a candidate iterate."""
    h11, h12, h22 = _hessian_arrays(grid, s_vals)
    t11, t12, t22 = h11 + v_vals, h12, h22 + v_vals
    lam1, _ = _eig2x2(t11, t12, t22)
    margin = float(lam1.min())
    out = {"margin": margin, "smin": float(s_vals.min())}
    if margin <= 0.0 or out["smin"] <= 0.0:
        return out
    ce = curvature_quotient(SymTensorField(grid, np.stack([t11, t12, t22])), 1)
    rhs = s_vals ** q * f_t_vals / v_vals
    res = ce.F_value.values - rhs
    out.update(ce=ce, rhs=rhs, res=res, rn=float(np.abs(res).max()),
               rhs_sup=float(np.abs(rhs).max()))
    return out


def _effective_tol(cfg: SolverConfig, grid: SphericalGrid, rhs_sup: float) -> float:
    grid_fac = max(1.0, (grid.n_theta / 64.0) ** 2)
    return max(cfg.newton_tol, cfg.newton_rtol * max(1.0, rhs_sup) * grid_fac)


def _newton(grid, s_vals, v_vals, f_t_vals, q, cfg, trace, t_tag):
    """Damped Newton iteration at fixed coefficients; returns converged values."""
    s_vals = _sym(grid, s_vals)
    ev = _eval(grid, s_vals, v_vals, f_t_vals, q)
    if ev["margin"] <= 0.0 or ev["smin"] <= 0.0:
        raise _NewtonFailed("initial iterate outside the admissible cone", cone=True)

    for it in range(cfg.max_newton_iters):
        tol = _effective_tol(cfg, grid, ev["rhs_sup"])
        trace.add(phase="aux-newton", t=t_tag, iteration=it,
                  residual=ev["rn"], margin=ev["margin"])
        if ev["rn"] <= tol:
            return _polish(grid, s_vals, v_vals, f_t_vals, q, cfg, trace, t_tag, ev)
        op = AuxLinearOperator(
            grid, ev["ce"].F_matrix,
            q * s_vals ** (q - 1.0) * f_t_vals / v_vals,
        )
        eta = _sym(grid, op.solve(-ev["res"], cfg))
        trace.linear_solves += 1
        alpha = 1.0
        while alpha >= cfg.ls_min_alpha:
            cand = _sym(grid, s_vals + alpha * eta)
            ev_new = _eval(grid, cand, v_vals, f_t_vals, q)
            if (ev_new["margin"] > 0.0 and ev_new["smin"] > 0.0
                    and ev_new["rn"] <= (1.0 - 1e-4 * alpha) * ev["rn"]):
                s_vals, ev = cand, ev_new
                trace.newton_steps += 1
                if alpha < 1.0:
                    trace.records[-1].alpha = alpha
                break
            alpha *= cfg.ls_shrink
        else:
            raise _NewtonFailed(
                f"line search failed at residual {ev['rn']:.3e}",
                cone=ev["margin"] <= 10.0 * abs(ev["margin"]) * 0,
            )
    raise _NewtonFailed(f"no convergence in {cfg.max_newton_iters} Newton iterations")


def _polish(grid, s_vals, v_vals, f_t_vals, q, cfg, trace, t_tag, ev):
    """Extra full Newton steps after convergence; stop when they cease to help."""
    for _ in range(cfg.polish_steps):
        if ev["rn"] <= 1e-13 * max(1.0, ev["rhs_sup"]):
            break
        op = AuxLinearOperator(
            grid, ev["ce"].F_matrix,
            q * s_vals ** (q - 1.0) * f_t_vals / v_vals,
        )
        cand = _sym(grid, s_vals + op.solve(-ev["res"], cfg))
        trace.linear_solves += 1
        ev_new = _eval(grid, cand, v_vals, f_t_vals, q)
        if (ev_new["margin"] > 0.0 and ev_new["smin"] > 0.0
                and ev_new["rn"] < ev["rn"]):
            s_vals, ev = cand, ev_new
            trace.newton_steps += 1
            trace.add(phase="aux-polish", t=t_tag, iteration=-1,
                      residual=ev["rn"], margin=ev["margin"])
        else:
            break
    return s_vals, ev


def solve_auxiliary(
    v: ScalarField,
    f_target: ScalarField,
    spec: ProblemSpec,
    cfg: SolverConfig | None = None,
    s_init: ScalarField | None = None,
    trace: SolveTrace | None = None,
):
    """Solve F(hess s + v g) = s^q f_target / v for s in the cone A[v].

    Marches the path v_t = t v + (1-t), f_t = t f_target + (1-t) from the
    known solution s = 1 at t = 0, with damped Newton at each step and t-step
    halving on failure.  A warm start s_init, when given, is tried directly at
    t = 1 before falling back to the full continuation.  Iterates are
    symmetrized every step, so the result is exactly even at grid level.

    Returns (s, trace).  Raises ConeExit, MaxStepsExceeded or
    LinearSolveFailure when the continuation cannot be completed.
    """
    cfg = cfg or SolverConfig()
    trace = trace if trace is not None else SolveTrace()
    grid = spec.grid
    if v.min() <= 0.0 or f_target.min() <= 0.0:
        raise ValueError("v and f_target must be positive")
    for name, fld in (("v", v), ("f_target", f_target)):
        defect = evenness_defect(fld)
        if defect > 1e-10 * fld.max():
            raise ValueError(f"{name} must be even (defect {defect:.3e})")
    v_vals, f_vals = v.values, f_target.values
    q = spec.q

    trace.aux_solves += 1
    if s_init is not None:
        try:
            s_out, ev = _newton(grid, s_init.values, v_vals, f_vals, q, cfg, trace, 1.0)
            return ScalarField(grid, s_out), trace
        except _NewtonFailed:
            trace.add(phase="aux-warmstart-failed", t=1.0, iteration=-1,
                      residual=np.nan, margin=np.nan,
                      note="falling back to continuation")

    s_vals = np.ones((grid.n_theta, grid.n_phi))
    t, step = 0.0, cfg.t_init_step
    last_reason = None
    while t < 1.0:
        t_try = min(1.0, t + step)
        v_t = t_try * v_vals + (1.0 - t_try)
        f_t = t_try * f_vals + (1.0 - t_try)
        try:
            s_vals, ev = _newton(grid, s_vals, v_t, f_t, q, cfg, trace, t_try)
            t = t_try
            step = min(2.0 * step, 1.0)
        except _NewtonFailed as exc:
            last_reason = exc
            step *= 0.5
            if step < cfg.t_min_step:
                if exc.cone:
                    raise ConeExit(str(exc)) from exc
                raise MaxStepsExceeded(
                    f"continuation stalled at t = {t:.4f}: {exc}"
                ) from exc
    return ScalarField(grid, s_vals), trace
