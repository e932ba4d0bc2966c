"""Stencil operator assembly and Krylov solvers for the elliptic sub-problems.

assemble_helmholtz builds c0 u - div(D grad u) as a five-point stencil with
the boundary closure folded into the coefficients; inhomogeneous boundary
data lands in an affine vector, so the discrete problem reads

    linear(u) = rhs + affine.

With c0 >= 0 the assembled matrix is an M-matrix (non-positive
off-diagonals, weakly dominant positive diagonal), which is what makes the
discrete nutrient comparison principle hold.

solve_spd is Jacobi-preconditioned conjugate gradients with minimal-residual
smoothing (Schoenauer/Weiss), so the reported residual history is
non-increasing and the returned iterate is the smoothed one.  The coupled
phase/chemical-potential step is solved through its Schur complement with
Jacobi-preconditioned BiCGStab.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .grid import (BCSpec, BCType, FaceVectorField, Grid2D, ScalarField,
                   datum_values, robin_transfer)


class BlockSingularError(RuntimeError):
    """Schur complement breakdown; usually means the time step is too large."""


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float             # relative 2-norm at exit
    converged: bool
    residual_history: tuple = ()

    def __post_init__(self):
        if self.converged and self.residual_history:
            assert self.residual <= self.residual_history[-1] + 1e-300


@dataclass
class StencilOperator:
    """Five-point operator: per-cell center/west/east/south/north coefficients.

    west[i, j] multiplies u[i-1, j] in row (i, j), and so on; first/last
    slabs of the neighbour arrays are zero.  affine carries the boundary
    data contribution: the represented equation is linear(u) = rhs + affine.
    """

    grid: Grid2D
    center: np.ndarray
    west: np.ndarray
    east: np.ndarray
    south: np.ndarray
    north: np.ndarray
    affine: np.ndarray
    spd: bool = False

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = self.center * u
        out[1:, :] += self.west[1:, :] * u[:-1, :]
        out[:-1, :] += self.east[:-1, :] * u[1:, :]
        out[:, 1:] += self.south[:, 1:] * u[:, :-1]
        out[:, :-1] += self.north[:, :-1] * u[:, 1:]
        return out

    def is_symmetric(self, tol: float = 1e-14) -> bool:
        scale = max(float(np.max(np.abs(self.center))), 1e-300)
        ew = np.max(np.abs(self.east[:-1, :] - self.west[1:, :]))
        ns = np.max(np.abs(self.north[:, :-1] - self.south[:, 1:]))
        return max(ew, ns) <= tol * scale

    def is_m_matrix(self, tol: float = 1e-12) -> bool:
        offs = (self.west, self.east, self.south, self.north)
        if any(np.any(o > tol) for o in offs):
            return False
        if np.any(self.center <= 0.0):
            return False
        rowsum_off = sum(np.abs(o) for o in offs)
        return bool(np.all(self.center >= rowsum_off - tol * np.abs(self.center)))

    def product_diagonal(self, other: "StencilOperator") -> np.ndarray:
        """diag(self @ other) for two stencils on the same grid."""
        d = self.center * other.center
        d[1:, :] += self.west[1:, :] * other.east[:-1, :]
        d[:-1, :] += self.east[:-1, :] * other.west[1:, :]
        d[:, 1:] += self.south[:, 1:] * other.north[:, :-1]
        d[:, :-1] += self.north[:, :-1] * other.south[:, 1:]
        return d


def _face_diffusivity(grid: Grid2D, diffusivity) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(diffusivity, FaceVectorField):
        return diffusivity.fx, diffusivity.fy
    d = float(diffusivity)
    if d < 0.0:
        raise ValueError(f"diffusivity must be >= 0, got {d}")
    return (np.full((grid.nx + 1, grid.ny), d), np.full((grid.nx, grid.ny + 1), d))


def assemble_helmholtz(c0, diffusivity, bc: BCSpec, grid: Grid2D | None = None) -> StencilOperator:
    """Assemble c0 u - div(diffusivity grad u) with the BC closure folded in.

    c0 is a ScalarField or scalar and must be non-negative (monotonicity of
    the operator, hence the comparison principle, depends on it).
    diffusivity is a scalar or a FaceVectorField of per-face values.
    """
    if isinstance(c0, ScalarField):
        grid = c0.grid
        c0v = c0.values
    else:
        if grid is None:
            raise ValueError("grid required when c0 is a scalar")
        c0v = np.full((grid.nx, grid.ny), float(c0))
    if np.any(c0v < 0.0):
        raise ValueError("negative zeroth-order coefficient breaks operator monotonicity")

    dx, dy = _face_diffusivity(grid, diffusivity)
    hx2, hy2 = grid.hx ** 2, grid.hy ** 2

    center = c0v.copy()
    west = np.zeros_like(c0v)
    east = np.zeros_like(c0v)
    south = np.zeros_like(c0v)
    north = np.zeros_like(c0v)
    affine = np.zeros_like(c0v)

    # interior faces couple the two adjacent cells symmetrically
    center[1:, :] += dx[1:-1, :] / hx2
    center[:-1, :] += dx[1:-1, :] / hx2
    west[1:, :] -= dx[1:-1, :] / hx2
    east[:-1, :] -= dx[1:-1, :] / hx2
    center[:, 1:] += dy[:, 1:-1] / hy2
    center[:, :-1] += dy[:, 1:-1] / hy2
    south[:, 1:] -= dy[:, 1:-1] / hy2
    north[:, :-1] -= dy[:, 1:-1] / hy2

    def fold_side(side, sbc, d_face, h, cen_slice, aff_slice):
        if sbc.kind in (BCType.NEUMANN_ZERO, BCType.COMBINED_FLUX_ZERO):
            return
        g = datum_values(grid, side, sbc.value)
        if sbc.kind is BCType.DIRICHLET:
            cen_slice += 2.0 * d_face / h ** 2
            aff_slice += 2.0 * d_face * g / h ** 2
        else:
            rc = robin_transfer(sbc, h)
            cen_slice += d_face * rc / (sbc.robin_k * h)
            aff_slice += d_face * rc * g / (sbc.robin_k * h)

    fold_side("left", bc.left, dx[0, :], grid.hx, center[0, :], affine[0, :])
    fold_side("right", bc.right, dx[-1, :], grid.hx, center[-1, :], affine[-1, :])
    fold_side("bottom", bc.bottom, dy[:, 0], grid.hy, center[:, 0], affine[:, 0])
    fold_side("top", bc.top, dy[:, -1], grid.hy, center[:, -1], affine[:, -1])

    op = StencilOperator(grid, center, west, east, south, north, affine)
    op.spd = op.is_symmetric() and bool(np.all(center > 0.0))
    return op


def identity_operator(grid: Grid2D) -> StencilOperator:
    z = np.zeros((grid.nx, grid.ny))
    op = StencilOperator(grid, np.ones_like(z), z.copy(), z.copy(), z.copy(), z.copy(), z.copy())
    op.spd = True
    return op


# ---------------------------------------------------------------------------
# Jacobi-PCG with minimal-residual smoothing
# ---------------------------------------------------------------------------

def solve_spd(op: StencilOperator, rhs: ScalarField, tol: float = 1e-10,
              maxiter: int = 20000, record_history: bool = False):
    """Solve linear(x) = rhs + affine for an SPD-flagged stencil operator.

    Returns (ScalarField, SolveReport).  The residual history (recorded on
    request) is the smoothed relative 2-norm and is non-increasing.
    """
    if not op.spd:
        raise ValueError("operator is not SPD-flagged")
    if not 0.0 < tol < 1.0:
        raise ValueError(f"tolerance must lie in (0, 1), got {tol}")

    b = rhs.values + op.affine
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        rep = SolveReport(0, 0.0, True, (0.0,) if record_history else ())
        return ScalarField(op.grid, np.zeros_like(b)), rep

    inv_diag = 1.0 / op.center
    x = np.zeros_like(b)
    r = b.copy()
    z = r * inv_diag
    p = z.copy()
    rz = float(np.vdot(r, z))

    y = x.copy()             # smoothed iterate
    s = r.copy()             # smoothed residual, equals b - A y
    res = float(np.linalg.norm(s)) / bnorm
    history = [res]

    it = 0
    while res > tol and it < maxiter:
        Ap = op.apply(p)
        pAp = float(np.vdot(p, Ap))
        if pAp <= 0.0:
            break  # loss of positive-definiteness; bail with current smoothed iterate
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        # minimal-residual smoothing keeps ||s|| non-increasing
        d = r - s
        dd = float(np.vdot(d, d))
        if dd > 0.0:
            eta = -float(np.vdot(s, d)) / dd
            if eta > 0.0:
                y = y + eta * (x - y)
                s = s + eta * d
        res = float(np.linalg.norm(s)) / bnorm
        history.append(res)
        z = r * inv_diag
        rz_new = float(np.vdot(r, z))
        beta = rz_new / rz
        p = z + beta * p
        rz = rz_new
        it += 1

    rep = SolveReport(it, res, res <= tol, tuple(history) if record_history else ())
    return ScalarField(op.grid, y), rep


# ---------------------------------------------------------------------------
# Coupled phase/chemical-potential block
# ---------------------------------------------------------------------------

def solve_block_ch(phi_op: StencilOperator, mu_op: StencilOperator, coupling: float,
                   rhs_phi: ScalarField, rhs_mu: ScalarField,
                   tol: float = 1e-8, maxiter: int = 20000):
    """Solve the semi-implicit phase/chemical-potential system.

    The block structure is

        coupling * phi + mu_op(mu) = rhs_phi        (mass balance row)
        mu = phi_op(phi) + rhs_mu                   (potential definition)

    where mu_op is -div(m grad .) under the chemical potential's boundary
    condition and phi_op is A c I - B Lap under the phase's.  Elimination of
    mu gives the Schur system (coupling I + mu_op phi_op) phi = ..., solved
    with BiCGStab preconditioned by the constant-coefficient version of the
    Schur operator (diagonal in the cell-centered cosine basis).

    Returns (phi, mu, SolveReport).  Raises BlockSingularError on Krylov
    breakdown, which in practice signals too large a time step.
    """
    if coupling <= 0.0:
        raise ValueError(f"mass coupling must be positive, got {coupling}")
    grid = rhs_phi.grid

    r2 = rhs_mu.values - phi_op.affine
    b = rhs_phi.values + mu_op.affine - mu_op.apply(r2)

    def S(u):
        return coupling * u + mu_op.apply(phi_op.apply(u))

    psolve = _schur_spectral_preconditioner(phi_op, mu_op, coupling)
    x, it, res, converged = _bicgstab(S, b, psolve, tol, maxiter)
    phi = x
    mu = phi_op.apply(phi) - phi_op.affine + rhs_mu.values
    rep = SolveReport(it, res, converged)
    return ScalarField(grid, phi), ScalarField(grid, mu), rep


def _schur_spectral_preconditioner(phi_op: StencilOperator, mu_op: StencilOperator,
                                   coupling: float):
    """Frozen-coefficient Schur operator, inverted exactly in the cosine basis.

    The cell-centered cosine modes diagonalize the constant-coefficient
    zero-flux Laplacian; mean mobility, reaction and diffusion coefficients
    are read off the assembled stencils.  The preconditioner only has to be
    a fixed nonsingular approximation, so the boundary-condition mismatch
    for non-Neumann sides is harmless.
    """
    grid = phi_op.grid
    hx2, hy2 = grid.hx ** 2, grid.hy ** 2
    m_bar = 0.5 * (float(np.mean(-mu_op.west[1:, :])) * hx2
                   + float(np.mean(-mu_op.north[:, :-1])) * hy2)
    b_bar = 0.5 * (float(np.mean(-phi_op.west[1:, :])) * hx2
                   + float(np.mean(-phi_op.north[:, :-1])) * hy2)
    react = phi_op.center + phi_op.west + phi_op.east + phi_op.south + phi_op.north
    c_bar = max(float(np.mean(react)), 0.0)
    m_bar = max(m_bar, 0.0)
    b_bar = max(b_bar, 0.0)

    lx = (2.0 / hx2) * (1.0 - np.cos(np.pi * np.arange(grid.nx) / grid.nx))
    ly = (2.0 / hy2) * (1.0 - np.cos(np.pi * np.arange(grid.ny) / grid.ny))
    lam = lx[:, None] + ly[None, :]
    eig = coupling + m_bar * lam * (c_bar + b_bar * lam)

    def psolve(r: np.ndarray) -> np.ndarray:
        rhat = dctn(r, type=2, norm="ortho")
        rhat /= eig
        return idctn(rhat, type=2, norm="ortho")

    return psolve


def _bicgstab(A, b, psolve, tol, maxiter):
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0, True
    x = np.zeros_like(b)
    r = b.copy()
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    res = 1.0
    breakdown_floor = 1e-30 * bnorm * bnorm
    for it in range(1, maxiter + 1):
        rho_new = float(np.vdot(rhat, r))
        if abs(rho_new) < breakdown_floor:
            raise BlockSingularError(
                "Krylov breakdown in the coupled phase step; the Schur system is "
                "numerically singular -- reduce the time step")
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        ph = psolve(p)
        v = A(ph)
        denom = float(np.vdot(rhat, v))
        if abs(denom) < breakdown_floor:
            raise BlockSingularError(
                "Krylov breakdown in the coupled phase step; the Schur system is "
                "numerically singular -- reduce the time step")
        alpha = rho_new / denom
        s = r - alpha * v
        res = float(np.linalg.norm(s)) / bnorm
        if res <= tol:
            x = x + alpha * ph
            return x, it, res, True
        sh = psolve(s)
        t = A(sh)
        tt = float(np.vdot(t, t))
        if tt == 0.0:
            x = x + alpha * ph
            res = float(np.linalg.norm(b - A(x))) / bnorm
            return x, it, res, res <= tol
        omega = float(np.vdot(t, s)) / tt
        x = x + alpha * ph + omega * sh
        r = s - omega * t
        res = float(np.linalg.norm(r)) / bnorm
        if res <= tol:
            return x, it, res, True
        rho = rho_new
    return x, maxiter, res, False
