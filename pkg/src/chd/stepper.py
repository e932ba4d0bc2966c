"""Coupled time integration: nutrient, phase, pressure, velocity.

One step advances the regularized system

    theta dt(sigma) = Lap(sigma) - h(phi) sigma          (implicit Euler)
    dt(phi) + div(phi v) = div(m(phi) grad mu) + Gamma_phi
    mu = A Psi'(phi) - B Lap(phi) - chi sigma            (convex splitting)
    div v = Gamma_v,  v from the Darcy law of the active variant

with a short Picard loop over the sub-solves (nutrient -> phase -> pressure
-> velocity).  theta = 0 gives the quasi-static nutrient.  The convex part
of Psi is taken implicitly and re-linearized (Newton) until the update
stalls, which is what makes the pure Cahn-Hilliard energy decrease hold to
solver tolerance; the concave part and the upwind advection are explicit.

Variants differ in the Darcy form and boundary conditions:

    DIRICHLET_Q        v = -K (grad q + phi grad(mu + chi sigma)),  q = 0 on
                       the boundary, combined flux (m grad mu - phi v).n = 0
    ROBIN_P_MU0        v = -K (grad p - (mu + chi sigma) grad phi),  mu = 0,
                       K dn(p) = a (g - p)
    ROBIN_P_MUNEUMANN  as ROBIN_P_MU0 but dn(mu) = 0; requires a potential
                       with globally bounded second derivative
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import grid as g
from . import linsolve, model
from .grid import (BCSpec, FaceVectorField, Grid2D, ScalarField,
                   boundary_face_value, divergence, face_average,
                   face_boundary_values, gradient)

SIGMA_BOUND_TOL = 1e-8


class StepError(RuntimeError):
    """A sub-solve failed; the step is rejected and the state unchanged."""


class CFLError(StepError):
    """Explicit advection stability bound violated; reduce the time step."""


class NonConvergenceError(StepError):
    """A linear sub-solve did not reach its tolerance."""


class ComparisonPrincipleError(StepError):
    """Nutrient left [0 - tol, 1 + tol] after a step; state rejected."""


class Variant(Enum):
    DIRICHLET_Q = "DIRICHLET_Q"
    ROBIN_P_MU0 = "ROBIN_P_MU0"
    ROBIN_P_MUNEUMANN = "ROBIN_P_MUNEUMANN"

    @property
    def uses_q(self) -> bool:
        return self is Variant.DIRICHLET_Q


def check_variant_compat(variant: Variant, params: model.ModelParams) -> None:
    if variant is Variant.ROBIN_P_MUNEUMANN and not params.potential.bounded_ddpsi:
        raise model.AdmissibilityError(
            "the Neumann chemical-potential variant requires quadratic growth: "
            "use the truncated-quartic potential (globally bounded Psi'')")


def phi_bc() -> BCSpec:
    return BCSpec.neumann_zero()


def mu_bc(variant: Variant) -> BCSpec:
    if variant is Variant.DIRICHLET_Q:
        return BCSpec.combined_flux_zero()
    if variant is Variant.ROBIN_P_MU0:
        return BCSpec.dirichlet(0.0)
    return BCSpec.neumann_zero()


def sigma_bc() -> BCSpec:
    return BCSpec.dirichlet(1.0)


def pressure_bc(variant: Variant, params: model.ModelParams, t: float) -> BCSpec:
    if variant is Variant.DIRICHLET_Q:
        return BCSpec.dirichlet(0.0)
    return BCSpec.robin(params.a, params.K, params.g_at(t))


@dataclass(frozen=True)
class SimState:
    t: float
    phi: ScalarField
    mu: ScalarField
    sigma: ScalarField
    v: FaceVectorField
    pressure: ScalarField       # q for DIRICHLET_Q, p for the Robin variants
    variant: Variant

    def __post_init__(self):
        for arr in (self.phi.values, self.mu.values, self.sigma.values,
                    self.pressure.values, self.v.fx, self.v.fy):
            g.check_finite(arr, "state field")
            arr.flags.writeable = False


@dataclass(frozen=True)
class StepConfig:
    dt: float
    outer_iters: int = 2
    tol_spd: float = 1e-10
    tol_block: float = 1e-8
    newton_tol: float = 1e-12
    max_newton: int = 12
    maxiter: int = 40000
    use_cutoff: bool = True
    cfl_max: float = 2.0
    # verification hooks: override the built-in variant boundary conditions
    nutrient_bc: BCSpec | None = None
    pressure_bc_override: BCSpec | None = None

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if self.outer_iters < 1:
            raise ValueError("need at least one coupling sweep per step")


# ---------------------------------------------------------------------------
# Sub-solves
# ---------------------------------------------------------------------------

def source_fields(phi: ScalarField, sigma: ScalarField, params: model.ModelParams,
                  use_cutoff: bool = True):
    gv, gphi = model.source_eval(phi.values, sigma.values, params.sources, use_cutoff)
    return ScalarField(phi.grid, gv), ScalarField(phi.grid, gphi)


def solve_nutrient(phi: ScalarField, sigma_prev: ScalarField | None,
                   params: model.ModelParams, dt: float | None = None,
                   tol: float = 1e-10, maxiter: int = 40000,
                   bc: BCSpec | None = None) -> ScalarField:
    """Implicit nutrient solve; theta = 0 gives the quasi-static equation."""
    gr = phi.grid
    hvals = model.h_eval(phi.values, params.h_spec)
    bc = bc if bc is not None else sigma_bc()
    if params.theta > 0.0:
        if dt is None or dt <= 0.0:
            raise ValueError("regularized nutrient needs a positive time step")
        if sigma_prev is None:
            raise ValueError("regularized nutrient needs the previous field")
        c0 = ScalarField(gr, hvals + params.theta / dt)
        rhs = ScalarField(gr, (params.theta / dt) * sigma_prev.values)
    else:
        c0 = ScalarField(gr, hvals)
        rhs = ScalarField(gr, np.zeros((gr.nx, gr.ny)))
    op = linsolve.assemble_helmholtz(c0, 1.0, bc)
    sol, rep = linsolve.solve_spd(op, rhs, tol=tol, maxiter=maxiter)
    if not rep.converged:
        raise NonConvergenceError(f"nutrient solve stalled at residual {rep.residual:.3e}")
    return sol


def korteweg_face_flux(phi: ScalarField, mu: ScalarField, sigma: ScalarField,
                       params: model.ModelParams, variant: Variant) -> FaceVectorField:
    """Face flux forcing the Darcy law.

    DIRICHLET_Q form: phi grad(mu + chi sigma); Robin forms:
    (mu + chi sigma) grad(phi), which vanishes on the boundary since
    dn(phi) = 0.  The same faces feed the pressure right-hand side and the
    velocity reconstruction so that div v = Gamma_v holds cell by cell.
    """
    gmu = gradient(mu, mu_bc(variant))
    if variant.uses_q:
        gsig = gradient(sigma, sigma_bc())
        pf = face_average(phi)
        fx = pf.fx * (gmu.fx + params.chi * gsig.fx)
        fy = pf.fy * (gmu.fy + params.chi * gsig.fy)
        return FaceVectorField(phi.grid, fx, fy)
    gphi = gradient(phi, phi_bc())
    muf = face_boundary_values(mu, mu_bc(variant))
    sigf = face_boundary_values(sigma, sigma_bc())
    fx = (muf.fx + params.chi * sigf.fx) * gphi.fx
    fy = (muf.fy + params.chi * sigf.fy) * gphi.fy
    return FaceVectorField(phi.grid, fx, fy)


def solve_pressure(phi: ScalarField, mu: ScalarField, sigma: ScalarField,
                   params: model.ModelParams, variant: Variant, t: float = 0.0,
                   tol: float = 1e-10, maxiter: int = 40000,
                   gamma_v: ScalarField | None = None,
                   use_cutoff: bool = True,
                   bc: BCSpec | None = None) -> ScalarField:
    """Elliptic pressure solve in flux form (q or p depending on variant)."""
    gr = phi.grid
    if gamma_v is None:
        gamma_v, _ = source_fields(phi, sigma, params, use_cutoff)
    flux = korteweg_face_flux(phi, mu, sigma, params, variant)
    dflux = divergence(flux)
    if variant.uses_q:
        rhs = ScalarField(gr, gamma_v.values + params.K * dflux.values)
    else:
        rhs = ScalarField(gr, gamma_v.values - params.K * dflux.values)
    bc = bc if bc is not None else pressure_bc(variant, params, t)
    op = linsolve.assemble_helmholtz(0.0, params.K, bc, grid=gr)
    sol, rep = linsolve.solve_spd(op, rhs, tol=tol, maxiter=maxiter)
    if not rep.converged:
        raise NonConvergenceError(f"pressure solve stalled at residual {rep.residual:.3e}")
    return sol


def reconstruct_velocity(phi: ScalarField, mu: ScalarField, sigma: ScalarField,
                         pressure: ScalarField, params: model.ModelParams,
                         variant: Variant, t: float = 0.0,
                         bc: BCSpec | None = None) -> FaceVectorField:
    """Face velocity from the Darcy law of the active variant.

    On the boundary the pressure gradient follows the closure, so for the
    Robin variants the outward velocity is exactly a (p_face - g) and for
    DIRICHLET_Q the one-sided gradient with q = 0 is used.
    """
    bc = bc if bc is not None else pressure_bc(variant, params, t)
    gp = gradient(pressure, bc)
    flux = korteweg_face_flux(phi, mu, sigma, params, variant)
    sign = 1.0 if variant.uses_q else -1.0
    vx = -params.K * (gp.fx + sign * flux.fx)
    vy = -params.K * (gp.fy + sign * flux.fy)
    return FaceVectorField(phi.grid, vx, vy)


def upwind_divergence(phi: ScalarField, v: FaceVectorField) -> ScalarField:
    """div(phi v) with donor-cell upwinding; zero advective flux through the boundary."""
    gr = phi.grid
    p = phi.values
    fx = np.zeros((gr.nx + 1, gr.ny))
    fy = np.zeros((gr.nx, gr.ny + 1))
    vin = v.fx[1:-1, :]
    fx[1:-1, :] = np.where(vin > 0.0, p[:-1, :], p[1:, :]) * vin
    vin = v.fy[:, 1:-1]
    fy[:, 1:-1] = np.where(vin > 0.0, p[:, :-1], p[:, 1:]) * vin
    return divergence(FaceVectorField(gr, fx, fy))


def cfl_number(v: FaceVectorField, dt: float) -> float:
    gr = v.grid
    return dt * max(float(np.max(np.abs(v.fx))) / gr.hx,
                    float(np.max(np.abs(v.fy))) / gr.hy)


def step_cahn_hilliard(phi_old: ScalarField, v: FaceVectorField, sigma: ScalarField,
                       params: model.ModelParams, variant: Variant, dt: float,
                       cfg: StepConfig | None = None):
    """One semi-implicit convex-splitting step of the phase equation.

    Returns (phi, mu, info) where info records Newton sweeps and solver
    iterations.  The convex part of Psi is re-linearized until the phase
    update stalls below newton_tol.
    """
    cfg = cfg or StepConfig(dt=dt)
    gr = phi_old.grid
    cfl = cfl_number(v, dt)
    if cfl > cfg.cfl_max:
        raise CFLError(f"advective CFL {cfl:.3f} exceeds {cfg.cfl_max}; reduce dt")

    mob_face = face_average(phi_old)
    m_face = FaceVectorField(gr, model.mobility_eval(mob_face.fx, params.mobility),
                             model.mobility_eval(mob_face.fy, params.mobility))
    P = linsolve.assemble_helmholtz(0.0, m_face, mu_bc(variant), grid=gr)

    adv = upwind_divergence(phi_old, v)
    _, gphi = source_fields(phi_old, sigma, params, cfg.use_cutoff)
    r1 = ScalarField(gr, phi_old.values / dt - adv.values + gphi.values)

    phi_lin = phi_old.values
    phi_new = mu_new = None
    info = {"newton_iters": 0, "block_iters": 0}
    delta_prev = None
    for _ in range(cfg.max_newton):
        dpsi_cvx, c = model.potential_convex_split(phi_lin, params.potential)
        Q = linsolve.assemble_helmholtz(ScalarField(gr, params.A * c), params.B, phi_bc())
        r2 = ScalarField(gr, params.A * (dpsi_cvx - c * phi_lin - phi_old.values)
                         - params.chi * sigma.values)
        phi_new, mu_new, rep = linsolve.solve_block_ch(
            Q, P, 1.0 / dt, r1, r2, tol=cfg.tol_block, maxiter=cfg.maxiter)
        if not rep.converged:
            raise NonConvergenceError(
                f"phase block solve stalled at residual {rep.residual:.3e}")
        info["newton_iters"] += 1
        info["block_iters"] += rep.iterations
        delta = float(np.max(np.abs(phi_new.values - phi_lin)))
        phi_lin = phi_new.values
        if delta <= cfg.newton_tol * max(1.0, float(np.max(np.abs(phi_new.values)))):
            break
        if delta_prev is not None and delta > 0.25 * delta_prev:
            # quadratic contraction has hit the linear-solver noise floor
            break
        delta_prev = delta
    return phi_new, mu_new, info


def advance(state: SimState, cfg: StepConfig, params: model.ModelParams) -> SimState:
    """One full time step: Picard sweeps over nutrient, phase, pressure, velocity."""
    t_new = state.t + cfg.dt
    phi, mu, sigma, v, pressure = state.phi, state.mu, state.sigma, state.v, state.pressure
    sig_bc = cfg.nutrient_bc if cfg.nutrient_bc is not None else sigma_bc()
    p_bc = cfg.pressure_bc_override

    for _ in range(cfg.outer_iters):
        sigma = solve_nutrient(phi, state.sigma, params, dt=cfg.dt,
                               tol=cfg.tol_spd, maxiter=cfg.maxiter, bc=sig_bc)
        phi, mu, _ = step_cahn_hilliard(state.phi, v, sigma, params,
                                        state.variant, cfg.dt, cfg)
        pressure = solve_pressure(phi, mu, sigma, params, state.variant, t=t_new,
                                  tol=cfg.tol_spd, maxiter=cfg.maxiter,
                                  use_cutoff=cfg.use_cutoff, bc=p_bc)
        v = reconstruct_velocity(phi, mu, sigma, pressure, params,
                                 state.variant, t=t_new, bc=p_bc)

    smin, smax = float(np.min(sigma.values)), float(np.max(sigma.values))
    if smin < -SIGMA_BOUND_TOL or smax > 1.0 + SIGMA_BOUND_TOL:
        raise ComparisonPrincipleError(
            f"nutrient bounds violated: [{smin:.3e}, {smax:.3e}]")
    return SimState(t_new, phi, mu, sigma, v, pressure, state.variant)


# ---------------------------------------------------------------------------
# Initialization, run loop, checkpointing
# ---------------------------------------------------------------------------

def initialize(grid2d: Grid2D, params: model.ModelParams, variant: Variant,
               phi0: ScalarField, sigma0: ScalarField | None = None,
               cfg: StepConfig | None = None, t0: float = 0.0) -> SimState:
    """Build a consistent initial state.

    For theta = 0 the nutrient is slaved to phi0; for theta > 0 sigma0 must
    be supplied (values in [0, 1]).  mu0 is evaluated directly from phi0 and
    the initial pressure/velocity come from one elliptic solve.
    """
    check_variant_compat(variant, params)
    cfg = cfg or StepConfig(dt=1.0)
    if params.theta > 0.0:
        if sigma0 is None:
            sigma0 = g.constant_field(grid2d, 1.0)
        lo, hi = float(np.min(sigma0.values)), float(np.max(sigma0.values))
        if lo < 0.0 or hi > 1.0:
            raise model.AdmissibilityError(
                f"initial nutrient must lie in [0, 1], got [{lo:.3g}, {hi:.3g}]")
    else:
        sigma0 = solve_nutrient(phi0, None, params, tol=cfg.tol_spd,
                                maxiter=cfg.maxiter, bc=cfg.nutrient_bc)

    _, dpsi, _ = model.potential_eval(phi0.values, params.potential)
    lap_phi = g.laplacian(phi0, phi_bc())
    mu0 = ScalarField(grid2d, params.A * dpsi - params.B * lap_phi.values
                      - params.chi * sigma0.values)
    pressure0 = solve_pressure(phi0, mu0, sigma0, params, variant, t=t0,
                               tol=cfg.tol_spd, maxiter=cfg.maxiter,
                               use_cutoff=cfg.use_cutoff, bc=cfg.pressure_bc_override)
    v0 = reconstruct_velocity(phi0, mu0, sigma0, pressure0, params, variant,
                              t=t0, bc=cfg.pressure_bc_override)
    return SimState(t0, phi0, mu0, sigma0, v0, pressure0, variant)


@dataclass
class RunResult:
    trajectory: list            # snapshot states (cadence + final)
    states_all: list | None     # every state when keep_all is set
    rows: list                  # one diagnostics dict per step
    failure: str | None = None


def run(initial: SimState, params: model.ModelParams, cfg: StepConfig,
        n_steps: int, snapshot_every: int = 0, keep_all: bool = False,
        row_fn=None) -> RunResult:
    """March n_steps from the initial state.

    row_fn(prev_state, new_state, step_index) -> dict is called after every
    accepted step (the diagnostics module provides the standard one).  On a
    step failure the partial trajectory is returned with the failure
    recorded.
    """
    traj = [initial]
    states_all = [initial] if keep_all else None
    rows = []
    state = initial
    failure = None
    for k in range(1, n_steps + 1):
        prev = state
        try:
            state = advance(state, cfg, params)
        except StepError as exc:
            failure = f"step {k}: {exc}"
            break
        if row_fn is not None:
            rows.append(row_fn(prev, state, k))
        if keep_all:
            states_all.append(state)
        if snapshot_every and (k % snapshot_every == 0):
            traj.append(state)
    if traj[-1] is not state:
        traj.append(state)      # always flush the last accepted state
    return RunResult(traj, states_all, rows, failure)


FIELD_NAMES = ("phi", "mu", "sigma", "pressure")


def save_checkpoint(directory, state: SimState, step_index: int,
                    run_id: str, config_hash: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for name in FIELD_NAMES:
        g.save_field(os.path.join(directory, f"{name}.csv"), getattr(state, name), state.t)
    manifest = {
        "format": "chd-checkpoint v1",
        "run_id": run_id,
        "t": f"{state.t:.17g}",
        "step_index": step_index,
        "config_hash": config_hash,
        "variant": state.variant.value,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint(directory, params: model.ModelParams,
                    cfg: StepConfig | None = None):
    """Rebuild a SimState from a checkpoint directory.

    Pressure and velocity are re-derived by one elliptic solve from the
    stored (phi, mu, sigma), matching how a fresh run initializes.
    """
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    variant = Variant(manifest["variant"])
    fields = {}
    t = None
    for name in FIELD_NAMES:
        fields[name], t = g.load_field(os.path.join(directory, f"{name}.csv"))
    cfg = cfg or StepConfig(dt=1.0)
    phi, mu, sigma = fields["phi"], fields["mu"], fields["sigma"]
    pressure = solve_pressure(phi, mu, sigma, params, variant, t=t,
                              tol=cfg.tol_spd, maxiter=cfg.maxiter,
                              use_cutoff=cfg.use_cutoff, bc=cfg.pressure_bc_override)
    v = reconstruct_velocity(phi, mu, sigma, pressure, params, variant,
                             t=t, bc=cfg.pressure_bc_override)
    state = SimState(t, phi, mu, sigma, v, pressure, variant)
    return state, manifest


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
