"""Structural diagnostics: energy bookkeeping, balance residuals, norms.

The continuous system satisfies an energy dissipation balance

    d/dt int[ A Psi(phi) + B/2 |grad phi|^2 ]
        + int[ m |grad mu|^2 + |v|^2 / K ]
    = int[ -chi m grad mu . grad sigma + Gamma_phi (mu + chi sigma) ] + S + boundary terms

with S = int Gamma_v q for the Dirichlet-q variant and
S = int Gamma_v (p - phi (mu + chi sigma)) for the Robin variants.  The
discrete residual of that identity, the nutrient comparison bounds, the
source/flux balance of div v = Gamma_v, and the zero-mean test of the
chemical potential equation are all computed here from state snapshots.

Residual conventions: the mean-of-mu check uses the splitting the stepper
actually solves, i.e. Psi' is evaluated as Psi_cvx'(phi_new) + Psi_ccv'(phi_old);
relative residuals are scaled by the L1 size of their ingredients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid as g
from . import linsolve, model
from .grid import (BCSpec, ScalarField, boundary_face_value, face_average,
                   gradient, integrate)
from .stepper import (SimState, Variant, mu_bc, phi_bc, pressure_bc, sigma_bc,
                      source_fields)

SIGMA_BOUND_TOL = 1e-8


# ---------------------------------------------------------------------------
# Energy and dissipation
# ---------------------------------------------------------------------------

def energy(phi: ScalarField, params: model.ModelParams) -> float:
    """Ginzburg-Landau energy: int A Psi(phi) + (B/2) |grad phi|^2."""
    psi, _, _ = model.potential_eval(phi.values, params.potential)
    grad = gradient(phi, phi_bc())
    e_bulk = params.A * float(np.sum(psi)) * phi.grid.cell_area
    e_grad = 0.5 * params.B * float(np.sum(grad.fx ** 2) + np.sum(grad.fy ** 2)) * phi.grid.cell_area
    return e_bulk + e_grad


def dissipation(state_n: SimState, state_np1: SimState, params: model.ModelParams) -> float:
    """m(phi_n) |grad mu|^2 + |v|^2 / K, face sums at the new time level."""
    mf = face_average(state_n.phi)
    mx = model.mobility_eval(mf.fx, params.mobility)
    my = model.mobility_eval(mf.fy, params.mobility)
    gmu = gradient(state_np1.mu, mu_bc(state_np1.variant))
    area = state_n.phi.grid.cell_area
    d = float(np.sum(mx * gmu.fx ** 2) + np.sum(my * gmu.fy ** 2)) * area
    v = state_np1.v
    d += float(np.sum(v.fx ** 2) + np.sum(v.fy ** 2)) * area / params.K
    return d


def _boundary_terms(state: SimState, params: model.ModelParams) -> float:
    """Boundary work terms of the energy identity for the active variant."""
    variant = state.variant
    if variant is Variant.DIRICHLET_Q:
        return 0.0      # q = 0 and zero combined flux kill both terms
    gr = state.phi.grid
    pbc = pressure_bc(variant, params, state.t)
    out = 0.0
    # - sum p_face (v.n) over the boundary
    sides = (("left", state.v.fx[0, :], -1.0, state.pressure.values[0, :], gr.hy),
             ("right", state.v.fx[-1, :], 1.0, state.pressure.values[-1, :], gr.hy),
             ("bottom", state.v.fy[:, 0], -1.0, state.pressure.values[:, 0], gr.hx),
             ("top", state.v.fy[:, -1], 1.0, state.pressure.values[:, -1], gr.hx))
    for side, vface, outward, p_in, dl in sides:
        sbc = getattr(pbc, side)
        p_face = boundary_face_value(gr, side, sbc, p_in)
        out -= float(np.sum(p_face * outward * vface)) * dl
    if variant is Variant.ROBIN_P_MU0:
        # + sum m dn(mu) (mu + chi sigma)_face; mu = 0 and sigma = 1 on the boundary
        mubc = mu_bc(variant)
        gmu = gradient(state.mu, mubc)
        mf = face_average(state.phi)
        coeff = params.chi * 1.0
        for side, gface, outward, phi_in, dl in (
                ("left", gmu.fx[0, :], -1.0, mf.fx[0, :], gr.hy),
                ("right", gmu.fx[-1, :], 1.0, mf.fx[-1, :], gr.hy),
                ("bottom", gmu.fy[:, 0], -1.0, mf.fy[:, 0], gr.hx),
                ("top", gmu.fy[:, -1], 1.0, mf.fy[:, -1], gr.hx)):
            m_face = model.mobility_eval(phi_in, params.mobility)
            out += coeff * float(np.sum(m_face * outward * gface)) * dl
    return out


def energy_balance_residual(state_n: SimState, state_np1: SimState,
                            params: model.ModelParams,
                            use_cutoff: bool = True) -> float:
    """|dE/dt + dissipation - rhs| for one accepted step (consistency check)."""
    dt = state_np1.t - state_n.t
    variant = state_np1.variant
    de = (energy(state_np1.phi, params) - energy(state_n.phi, params)) / dt
    dis = dissipation(state_n, state_np1, params)

    gr = state_n.phi.grid
    area = gr.cell_area
    mf = face_average(state_n.phi)
    mx = model.mobility_eval(mf.fx, params.mobility)
    my = model.mobility_eval(mf.fy, params.mobility)
    gmu = gradient(state_np1.mu, mu_bc(variant))
    gsig = gradient(state_np1.sigma, sigma_bc())
    rhs = -params.chi * float(np.sum(mx * gmu.fx * gsig.fx)
                              + np.sum(my * gmu.fy * gsig.fy)) * area

    gv_new, _ = source_fields(state_np1.phi, state_np1.sigma, params, use_cutoff)
    _, gphi_old = source_fields(state_n.phi, state_np1.sigma, params, use_cutoff)
    mu_chi = state_np1.mu.values + params.chi * state_np1.sigma.values
    rhs += float(np.sum(gphi_old.values * mu_chi)) * area
    if variant.uses_q:
        rhs += float(np.sum(gv_new.values * state_np1.pressure.values)) * area
    else:
        work = state_np1.pressure.values - state_np1.phi.values * mu_chi
        rhs += float(np.sum(gv_new.values * work)) * area
    rhs += _boundary_terms(state_np1, params)
    return abs(de + dis - rhs)


# ---------------------------------------------------------------------------
# Balance identities
# ---------------------------------------------------------------------------

def source_flux_residual(state: SimState, params: model.ModelParams,
                         use_cutoff: bool = True) -> tuple[float, float]:
    """(absolute, relative) residual of int Gamma_v = boundary outflux of v."""
    gv, _ = source_fields(state.phi, state.sigma, params, use_cutoff)
    total = integrate(gv)
    outflux = g.boundary_flux_integral(state.v)
    scale = integrate(ScalarField(state.phi.grid, np.abs(gv.values)))
    gr = state.phi.grid
    scale += (np.sum(np.abs(state.v.fx[0, :])) + np.sum(np.abs(state.v.fx[-1, :]))) * gr.hy
    scale += (np.sum(np.abs(state.v.fy[:, 0])) + np.sum(np.abs(state.v.fy[:, -1]))) * gr.hx
    resid = abs(total - outflux)
    return resid, resid / max(scale, 1e-14)


def mean_mu_residual(state_n: SimState, state_np1: SimState,
                     params: model.ModelParams) -> tuple[float, float]:
    """(absolute, relative) zero-mean test of the chemical potential equation.

    Valid for the Neumann chemical-potential variant, where dn(phi) = 0
    makes the Laplacian term integrate to zero exactly: the mean of mu is
    pinned by int(A Psi' - chi sigma).  Psi' uses the stepper's splitting,
    convex part at the new phase, concave part at the old.
    """
    dpsi_cvx, _ = model.potential_convex_split(state_np1.phi.values, params.potential)
    dpsi_split = dpsi_cvx - state_n.phi.values
    area = state_n.phi.grid.cell_area
    resid = abs(float(np.sum(state_np1.mu.values + params.chi * state_np1.sigma.values
                             - params.A * dpsi_split)) * area)
    scale = float(np.sum(np.abs(state_np1.mu.values))
                  + params.chi * np.sum(np.abs(state_np1.sigma.values))
                  + params.A * np.sum(np.abs(dpsi_split))) * area
    return resid, resid / max(scale, 1e-14)


def comparison_principle_check(trajectory) -> tuple[float, float]:
    """Global nutrient extrema over a trajectory of states."""
    lo = min(float(np.min(s.sigma.values)) for s in trajectory)
    hi = max(float(np.max(s.sigma.values)) for s in trajectory)
    return lo, hi


def comparison_principle_pass(lo: float, hi: float) -> bool:
    return lo >= -SIGMA_BOUND_TOL and hi <= 1.0 + SIGMA_BOUND_TOL


# ---------------------------------------------------------------------------
# Norm inventory
# ---------------------------------------------------------------------------

def state_norms(state: SimState, params: model.ModelParams) -> dict:
    """Per-state entries of the estimate inventory."""
    gr = state.phi.grid
    psi, _, _ = model.potential_eval(state.phi.values, params.potential)
    pbc = pressure_bc(state.variant, params, state.t)
    # boundary L2 norm of the pressure from the closure face values
    p = state.pressure
    b = 0.0
    for side, p_in, dl in (("left", p.values[0, :], gr.hy),
                           ("right", p.values[-1, :], gr.hy),
                           ("bottom", p.values[:, 0], gr.hx),
                           ("top", p.values[:, -1], gr.hx)):
        pf = boundary_face_value(gr, side, getattr(pbc, side), p_in)
        b += float(np.sum(pf ** 2)) * dl
    return {
        "phi_h1": g.h1_norm(state.phi, phi_bc()),
        "mu_h1": g.h1_norm(state.mu, mu_bc(state.variant)),
        "sigma_h1": g.h1_norm(state.sigma, sigma_bc()),
        "v_l2": g.face_l2_norm(state.v),
        "pressure_h1": g.h1_norm(state.pressure, pbc),
        "pressure_bdry_l2": math.sqrt(b),
        "psi_l1": float(np.sum(np.abs(psi))) * gr.cell_area,
    }


@dataclass
class NormInventory:
    sup_phi_h1: float = 0.0
    sup_psi_l1: float = 0.0
    l2t_mu_h1: float = 0.0
    l2t_sigma_h1: float = 0.0
    l2t_v_l2: float = 0.0
    l85t_pressure_h1: float = 0.0
    per_step: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("sup_phi_h1", "sup_psi_l1", "l2t_mu_h1", "l2t_sigma_h1",
                 "l2t_v_l2", "l85t_pressure_h1")}


def norm_suite(trajectory, params: model.ModelParams) -> NormInventory:
    """Aggregate the inventory over a trajectory (one-step time quadrature)."""
    if not trajectory:
        raise ValueError("empty trajectory")
    inv = NormInventory()
    l2_mu = l2_sig = l2_v = l85_p = 0.0
    prev_t = trajectory[0].t
    for k, state in enumerate(trajectory):
        row = state_norms(state, params)
        inv.per_step.append(row)
        inv.sup_phi_h1 = max(inv.sup_phi_h1, row["phi_h1"])
        inv.sup_psi_l1 = max(inv.sup_psi_l1, row["psi_l1"])
        if k > 0:
            dt = state.t - prev_t
            l2_mu += row["mu_h1"] ** 2 * dt
            l2_sig += row["sigma_h1"] ** 2 * dt
            l2_v += row["v_l2"] ** 2 * dt
            l85_p += row["pressure_h1"] ** (8.0 / 5.0) * dt
        prev_t = state.t
    inv.l2t_mu_h1 = math.sqrt(l2_mu)
    inv.l2t_sigma_h1 = math.sqrt(l2_sig)
    inv.l2t_v_l2 = math.sqrt(l2_v)
    inv.l85t_pressure_h1 = l85_p ** (5.0 / 8.0)
    return inv


# ---------------------------------------------------------------------------
# Per-step diagnostics rows and reports
# ---------------------------------------------------------------------------

COLUMNS = ("step", "t", "sigma_min", "sigma_max", "energy", "dissipation",
           "energy_balance_residual", "source_flux_residual", "source_flux_rel",
           "mean_mu_residual", "mean_mu_rel", "mass_phi",
           "phi_h1", "mu_h1", "sigma_h1", "v_l2", "pressure_h1",
           "pressure_bdry_l2", "psi_l1")

CSV_SCHEMA = "# chd-diagnostics v1"


def make_row_fn(params: model.ModelParams, use_cutoff: bool = True):
    def row_fn(prev: SimState, new: SimState, step_index: int) -> dict:
        sf_abs, sf_rel = source_flux_residual(new, params, use_cutoff)
        mm_abs, mm_rel = mean_mu_residual(prev, new, params)
        row = {
            "step": step_index,
            "t": new.t,
            "sigma_min": float(np.min(new.sigma.values)),
            "sigma_max": float(np.max(new.sigma.values)),
            "energy": energy(new.phi, params),
            "dissipation": dissipation(prev, new, params),
            "energy_balance_residual": energy_balance_residual(prev, new, params, use_cutoff),
            "source_flux_residual": sf_abs,
            "source_flux_rel": sf_rel,
            "mean_mu_residual": mm_abs,
            "mean_mu_rel": mm_rel,
            "mass_phi": integrate(new.phi),
        }
        row.update(state_norms(new, params))
        return row
    return row_fn


@dataclass
class InvariantReport:
    sigma_min: float
    sigma_max: float
    max_source_flux_rel: float
    max_mean_mu_rel: float
    max_energy_balance_residual: float
    energy_monotone: bool
    checks: list = field(default_factory=list)

    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)


def summarize(rows, variant: Variant, energy_tol: float | None = None) -> InvariantReport:
    """Aggregate per-step rows into pass/fail invariants.

    The mean-of-mu identity is only asserted for the Neumann variant and the
    energy monotonicity flag is informational unless energy_tol is given
    (pure Cahn-Hilliard runs).
    """
    if not rows:
        rep = InvariantReport(math.nan, math.nan, 0.0, 0.0, 0.0, True)
        rep.checks.append(("no steps", True, 0.0))
        return rep
    smin = min(r["sigma_min"] for r in rows)
    smax = max(r["sigma_max"] for r in rows)
    sf = max(r["source_flux_rel"] for r in rows)
    mm = max(r["mean_mu_rel"] for r in rows)
    eb = max(r["energy_balance_residual"] for r in rows)
    energies = [r["energy"] for r in rows]
    slack = (energy_tol if energy_tol is not None else 0.0) * abs(energies[0])
    monotone = all(e1 <= e0 + max(slack, 1e-300)
                   for e0, e1 in zip(energies, energies[1:]))
    rep = InvariantReport(smin, smax, sf, mm, eb, monotone)
    rep.checks.append(("comparison principle", comparison_principle_pass(smin, smax),
                       max(-smin, smax - 1.0)))
    rep.checks.append(("source/flux balance", sf <= 1e-8, sf))
    if variant is Variant.ROBIN_P_MUNEUMANN:
        rep.checks.append(("mean-of-mu identity", mm <= 1e-8, mm))
    if energy_tol is not None:
        rep.checks.append(("energy monotonicity", monotone, 0.0))
    return rep


def write_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_SCHEMA + "\n")
        fh.write(",".join(COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in COLUMNS) + "\n")


def read_csv(path):
    with open(path) as fh:
        schema = fh.readline().strip()
        if not schema.startswith("# chd-diagnostics v"):
            raise ValueError(f"not a diagnostics file: {schema!r}")
        major = schema.rsplit("v", 1)[1].split(".")[0]
        if int(major) != 1:
            raise ValueError(f"unsupported diagnostics schema version {major}")
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            vals = line.strip().split(",")
            rows.append({k: (int(v) if k == "step" else float(v))
                         for k, v in zip(header, vals)})
    return rows


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    return f"{v:.17g}"


# ---------------------------------------------------------------------------
# Why all-Neumann pressure data is inconsistent here
# ---------------------------------------------------------------------------

def zero_mean_obstruction_demo(params: model.ModelParams, grid2d,
                               phi_value: float = 0.2) -> dict:
    """Show that nonzero-mean volume sources force flow through the boundary.

    Runs one Robin pressure solve with the given sources and reports the
    boundary outflux against int Gamma_v; then assembles the pressure
    operator with homogeneous Neumann sides, whose rows sum to zero, and
    reports the incompatibility of the same right-hand side (its projection
    onto constants), which is why an all-Neumann closure cannot carry
    sources with nonzero mean.
    """
    gr = grid2d
    phi = g.constant_field(gr, phi_value)
    from .stepper import initialize, StepConfig  # local import to avoid a cycle
    params_robin = params
    state = initialize(gr, params_robin, Variant.ROBIN_P_MU0, phi,
                       cfg=StepConfig(dt=1.0))
    gv, _ = source_fields(state.phi, state.sigma, params, True)
    total = integrate(gv)
    outflux = g.boundary_flux_integral(state.v)

    neumann = BCSpec.neumann_zero()
    op = linsolve.assemble_helmholtz(0.0, params.K, neumann, grid=gr)
    row_sums = (op.center + op.west + op.east + op.south + op.north)
    singular = float(np.max(np.abs(row_sums))) <= 1e-12 * float(np.max(np.abs(op.center)))
    incompatibility = abs(total) / gr.area
    return {
        "gamma_v_integral": total,
        "boundary_outflux": outflux,
        "balance_residual": abs(total - outflux),
        "all_neumann_singular": singular,
        "incompatibility_residual": incompatibility,
        "incompatible": singular and incompatibility > 1e-12,
    }
