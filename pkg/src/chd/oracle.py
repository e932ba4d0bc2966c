"""Independent low-dimensional references for cross-validation.

Two reductions of the coupled system have trustworthy stand-alone solvers:

* spatially constant states with zero velocity collapse to the scalar ODE
  d(phi)/dt = b_phi(phi) + f_phi(phi) (nutrient identically 1 when the
  consumption rate vanishes), integrated here with classical fixed-step RK4;

* the pure Cahn-Hilliard core (no advection, no chemotaxis, constant
  mobility) on [0, 1] with natural boundary conditions, which the Neumann
  cosine basis cos(k pi x) diagonalizes.  The spectral stepper uses the same
  convex-splitting rule as the grid stepper, with the nonlinear term
  projected by dealiased midpoint collocation (3/2 rule).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model


def ode_reference(phi0: float, params: model.ModelParams, T: float, dt: float) -> float:
    """RK4 integration of d(phi)/dt = b_phi(phi) * 1 + f_phi(phi)."""
    if params.h_spec.kind != "zero":
        raise ValueError("ODE reduction assumes zero nutrient consumption (sigma = 1)")

    def f(s: float) -> float:
        return float(params.sources.b_phi(s) + params.sources.f_phi(s))

    n = max(1, int(round(T / dt)))
    h = T / n
    y = float(phi0)
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


# ---------------------------------------------------------------------------
# Cosine-basis Galerkin Cahn-Hilliard
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GalerkinState:
    """Coefficients of phi and mu in the basis {cos(k pi x)}, k = 0..N-1."""

    t: float
    a: np.ndarray       # phi coefficients, length N
    b: np.ndarray       # mu coefficients, length N

    @property
    def n_modes(self) -> int:
        return self.a.size


def _collocation(n_modes: int, oversample: float = 1.5):
    """Midpoint collocation grid and transform matrices for the cosine basis.

    Returns (x, E, W): evaluation E[m, k] = cos(k pi x_m) and projection W
    with W @ E = I thanks to midpoint-rule discrete orthogonality; the grid
    carries ceil(oversample * N) points to dealias products.
    """
    m = int(np.ceil(oversample * n_modes))
    x = (np.arange(m) + 0.5) / m
    k = np.arange(n_modes)
    E = np.cos(np.outer(x, k) * np.pi)
    W = E.T.copy() * (2.0 / m)
    W[0, :] *= 0.5
    return x, E, W


def galerkin_project(f, n_modes: int, quad_points: int = 4096) -> np.ndarray:
    """Cosine coefficients of a function on [0, 1] by fine midpoint quadrature."""
    x = (np.arange(quad_points) + 0.5) / quad_points
    k = np.arange(n_modes)
    basis = np.cos(np.outer(k, x) * np.pi)
    coef = basis @ np.asarray(f(x), dtype=float) * (2.0 / quad_points)
    coef[0] *= 0.5
    return coef


def galerkin_eval(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    k = np.arange(coeffs.size)
    return np.cos(np.outer(np.asarray(x, dtype=float), k) * np.pi) @ coeffs


def _check_spectral_params(params: model.ModelParams) -> float:
    if params.mobility.kind != "constant":
        raise ValueError("spectral reference requires constant mobility")
    if params.chi != 0.0:
        raise ValueError("spectral reference is the chi = 0 core")
    return params.mobility.m0


def spectral_ch_step(state: GalerkinState, params: model.ModelParams, dt: float,
                     newton_tol: float = 1e-12, max_newton: int = 12) -> GalerkinState:
    """One convex-splitting step of pure Cahn-Hilliard in coefficient space.

    Same time rule as the grid stepper: implicit linearized convex part,
    explicit concave part; the multiplication operator of the linearized
    curvature is formed by dealiased collocation.  The zeroth mode is
    conserved exactly (its Laplacian eigenvalue is zero).
    """
    m = _check_spectral_params(params)
    n = state.n_modes
    _, E, W = _collocation(n)
    k2 = (np.arange(n) * np.pi) ** 2
    a_old = state.a
    phi_old_x = E @ a_old

    a_lin = a_old.copy()
    a_new = a_old
    for _ in range(max_newton):
        phi_lin_x = E @ a_lin
        dpsi_cvx, c = model.potential_convex_split(phi_lin_x, params.potential)
        rem_x = dpsi_cvx - c * phi_lin_x - phi_old_x
        C = W @ (c[:, None] * E)
        sys = (np.eye(n) / dt
               + m * k2[:, None] * (params.A * C + params.B * np.diag(k2)))
        rhs = a_old / dt - m * k2 * (params.A * (W @ rem_x))
        a_new = np.linalg.solve(sys, rhs)
        delta = float(np.max(np.abs(a_new - a_lin)))
        a_lin = a_new
        if delta <= newton_tol * max(1.0, float(np.max(np.abs(a_new)))):
            break
    phi_new_x = E @ a_new
    dpsi_cvx, _ = model.potential_convex_split(phi_new_x, params.potential)
    # mu from the splitting: convex part at the new phase, concave at the old
    dpsi_split_x = dpsi_cvx - phi_old_x
    b = params.A * (W @ dpsi_split_x) + params.B * k2 * a_new
    return GalerkinState(state.t + dt, a_new, b)


def spectral_run(a0: np.ndarray, params: model.ModelParams, dt: float,
                 n_steps: int) -> list:
    k2 = (np.arange(a0.size) * np.pi) ** 2
    _, E, W = _collocation(a0.size)
    dpsi = model.potential_eval(E @ a0, params.potential)[1]
    b0 = params.A * (W @ dpsi) + params.B * k2 * a0
    states = [GalerkinState(0.0, np.asarray(a0, dtype=float), b0)]
    for _ in range(n_steps):
        states.append(spectral_ch_step(states[-1], params, dt))
    return states


def dispersion_rate(mode: int, params: model.ModelParams) -> float:
    """Linearized growth rate of cos(k pi x) about phi = 0 for the quartic well."""
    m = params.mobility.m0
    k2 = (mode * np.pi) ** 2
    return m * k2 * (params.A - params.B * k2)


# ---------------------------------------------------------------------------
# Grid vs Galerkin cross-validation
# ---------------------------------------------------------------------------

def cross_validate(grid_run, galerkin_run, tol: float = 1e-3) -> dict:
    """Max-over-time L2 discrepancy between grid and spectral solutions.

    grid_run: sequence of states carrying a 1D-compatible phase field
    (SimState or ScalarField); galerkin_run: matching GalerkinState
    sequence.  Both must share time levels.  Returns a report dict with the
    pass flag; mismatched runs simply fail the tolerance.
    """
    if len(grid_run) != len(galerkin_run):
        raise ValueError("runs must share their snapshot times")
    worst = 0.0
    series = []
    for gs, ss in zip(grid_run, galerkin_run):
        phi = gs.phi if hasattr(gs, "phi") else gs
        vals = phi.values
        prof = vals.mean(axis=1)            # y-average of the quasi-1D field
        x = phi.grid.xc() / phi.grid.Lx
        rec = galerkin_eval(ss.a, x)
        err = float(np.sqrt(np.sum((prof - rec) ** 2) * (phi.grid.hx / phi.grid.Lx)))
        series.append(err)
        worst = max(worst, err)
    return {"max_l2": worst, "series": series, "tol": tol, "passed": worst <= tol}
