"""Constitutive laws for the tumour-growth mixture model.

Everything the PDE system needs pointwise lives here: the double-well
potential (quartic, or quartic truncated to quadratic growth), the phase
mobility, the nutrient consumption rate, and the volume/mass source terms
of the form b(phi)*sigma + f(phi) with bounded coefficient functions.

All evaluators are pure and accept scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class AdmissibilityError(ValueError):
    """A constitutive spec violates one of the model's standing bounds."""


def cutoff(s):
    """Clamp to [0, 1]: max(0, min(1, s)). Works on scalars and arrays."""
    return np.clip(s, 0.0, 1.0)


def smoothstep(t):
    """C1 ramp 3t^2 - 2t^3 on [0,1], clamped outside."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


# ---------------------------------------------------------------------------
# Bounded scalar shapes (used for h, b_v, b_phi, f_v, f_phi)
# ---------------------------------------------------------------------------

class ShapeKind(Enum):
    ZERO = "zero"
    CONSTANT = "constant"
    CLAMPED_LINEAR = "clamped-linear"
    SMOOTHSTEP = "smoothstep"


@dataclass(frozen=True)
class ShapeFn:
    """Bounded continuous scalar function with a declared sup bound.

    clamped-linear and smoothstep interpolate from (s0, y0) to (s1, y1)
    and are constant outside [s0, s1], so sup|f| = max(|y0|, |y1|).
    """

    kind: ShapeKind = ShapeKind.ZERO
    value: float = 0.0          # constant kind
    s0: float = -1.0
    y0: float = 0.0
    s1: float = 1.0
    y1: float = 1.0
    sup: float | None = None    # declared bound; default inferred

    def __post_init__(self):
        if self.kind in (ShapeKind.CLAMPED_LINEAR, ShapeKind.SMOOTHSTEP):
            if not self.s1 > self.s0:
                raise AdmissibilityError(f"shape needs s1 > s0, got [{self.s0}, {self.s1}]")
        declared = self.sup if self.sup is not None else self._natural_sup()
        if declared < self._natural_sup() - 1e-14:
            raise AdmissibilityError(
                f"declared sup {declared} below actual bound {self._natural_sup()}")
        object.__setattr__(self, "sup", float(declared))

    def _natural_sup(self) -> float:
        if self.kind is ShapeKind.ZERO:
            return 0.0
        if self.kind is ShapeKind.CONSTANT:
            return abs(self.value)
        return max(abs(self.y0), abs(self.y1))

    def __call__(self, s):
        if self.kind is ShapeKind.ZERO:
            return np.zeros_like(np.asarray(s, dtype=float))
        if self.kind is ShapeKind.CONSTANT:
            return np.full_like(np.asarray(s, dtype=float), self.value)
        t = (np.asarray(s, dtype=float) - self.s0) / (self.s1 - self.s0)
        if self.kind is ShapeKind.CLAMPED_LINEAR:
            r = np.clip(t, 0.0, 1.0)
        else:
            r = smoothstep(t)
        return self.y0 + (self.y1 - self.y0) * r


# ---------------------------------------------------------------------------
# Mobility, nutrient consumption
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MobilitySpec:
    """Phase mobility m with 0 < m0 <= m(s) <= m1 everywhere."""

    kind: str = "constant"      # "constant" | "clamped-linear"
    m0: float = 1.0
    m1: float = 1.0
    s0: float = -1.0
    s1: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.m0 <= self.m1):
            raise AdmissibilityError(f"mobility bounds need 0 < m0 <= m1, got ({self.m0}, {self.m1})")
        if self.kind not in ("constant", "clamped-linear"):
            raise AdmissibilityError(f"unknown mobility kind {self.kind!r}")
        if self.kind == "clamped-linear" and not self.s1 > self.s0:
            raise AdmissibilityError("clamped-linear mobility needs s1 > s0")

    def __call__(self, s):
        if self.kind == "constant":
            return np.full_like(np.asarray(s, dtype=float), self.m0)
        t = np.clip((np.asarray(s, dtype=float) - self.s0) / (self.s1 - self.s0), 0.0, 1.0)
        return self.m0 + (self.m1 - self.m0) * t


@dataclass(frozen=True)
class NutrientConsumptionSpec:
    """Consumption rate h with 0 <= h <= 1, h(-1) = 0 and h(1) = 1 by default."""

    kind: str = "clamped-linear"    # "zero" | "clamped-linear" | "smoothstep"
    s0: float = -1.0
    s1: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "clamped-linear", "smoothstep"):
            raise AdmissibilityError(f"unknown consumption kind {self.kind!r}")
        if self.kind != "zero" and not self.s1 > self.s0:
            raise AdmissibilityError("consumption ramp needs s1 > s0")

    def __call__(self, s):
        if self.kind == "zero":
            return np.zeros_like(np.asarray(s, dtype=float))
        t = (np.asarray(s, dtype=float) - self.s0) / (self.s1 - self.s0)
        if self.kind == "clamped-linear":
            return np.clip(t, 0.0, 1.0)
        return smoothstep(t)


def mobility_eval(s, spec: MobilitySpec):
    return spec(s)


def h_eval(s, spec: NutrientConsumptionSpec):
    return spec(s)


# ---------------------------------------------------------------------------
# Double-well potential
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    """Double-well energy density with equal minima at +-1.

    quartic:           psi(s) = (s^2 - 1)^2 / 4, psi'' grows like 3 s^2.
    truncated-quartic: quartic inside |s| <= s_star, extended beyond with
                       the C2 quadratic continuation (psi'' frozen at its
                       value at s_star), so psi'' is globally bounded.
    """

    kind: str = "quartic"       # "quartic" | "truncated-quartic"
    s_star: float = 2.0

    def __post_init__(self):
        if self.kind not in ("quartic", "truncated-quartic"):
            raise AdmissibilityError(f"unknown potential kind {self.kind!r}")
        if self.kind == "truncated-quartic" and self.s_star < 1.0:
            # keep both wells inside the untouched region
            raise AdmissibilityError(f"truncation threshold must be >= 1, got {self.s_star}")

    @property
    def bounded_ddpsi(self) -> bool:
        return self.kind == "truncated-quartic"

    def quadratic_lower_bound(self) -> tuple[float, float]:
        """Constants (c1, c2) with psi(s) >= c1 s^2 - c2 for all s."""
        if self.kind == "quartic":
            # 1/4 (s^2-1)^2 - s^2/4 has minimum -(5/16 - ... ) at s^2 = 3/2
            return 0.25, 0.3125
        # tails are quadratic with curvature (3 s*^2 - 1) >= 2; take c1 from
        # the quartic core, then push c2 up until the sampled gap closes
        c1 = 0.25
        s = np.linspace(-50.0, 50.0, 20001)
        psi, _, _ = potential_eval(s, self)
        c2 = float(np.max(c1 * s * s - psi))
        return c1, max(c2, 0.0)


def potential_eval(s, spec: PotentialSpec):
    """Return (psi, dpsi, ddpsi) at s for the given potential spec."""
    s = np.asarray(s, dtype=float)
    psi = 0.25 * (s * s - 1.0) ** 2
    dpsi = s * s * s - s
    ddpsi = 3.0 * s * s - 1.0
    if spec.kind == "quartic":
        if psi.ndim == 0:
            return float(psi), float(dpsi), float(ddpsi)
        return psi, dpsi, ddpsi

    a = spec.s_star
    psi_a = 0.25 * (a * a - 1.0) ** 2
    dpsi_a = a ** 3 - a
    ddpsi_a = 3.0 * a * a - 1.0
    t = np.abs(s) - a
    outside = t > 0.0
    sign = np.sign(s)
    # even C2 extension: value/slope/curvature matched at |s| = s_star
    psi_out = psi_a + dpsi_a * t + 0.5 * ddpsi_a * t * t
    dpsi_out = (dpsi_a + ddpsi_a * t) * sign
    psi = np.where(outside, psi_out, psi)
    dpsi = np.where(outside, dpsi_out, dpsi)
    ddpsi = np.where(outside, ddpsi_a, ddpsi)
    if psi.ndim == 0:
        return float(psi), float(dpsi), float(ddpsi)
    return psi, dpsi, ddpsi


def potential_convex_split(s, spec: PotentialSpec):
    """Convex/concave decomposition used by the semi-implicit stepper.

    psi = psi_cvx + psi_ccv with psi_ccv(s) = -s^2/2.  Adding s^2/2 makes
    both potential kinds convex (curvature 3s^2 for the quartic core,
    3 s_star^2 for the tails), so treating psi_cvx implicitly and psi_ccv
    explicitly gives the unconditional energy decrease of the splitting.

    Returns (dpsi_cvx, ddpsi_cvx) at s.
    """
    _, dpsi, ddpsi = potential_eval(s, spec)
    return dpsi + np.asarray(s, dtype=float), ddpsi + 1.0


# ---------------------------------------------------------------------------
# Source terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceSpec:
    """Volume and mass sources Gamma_v = b_v(phi) sigma + f_v(phi), same for phi."""

    b_v: ShapeFn = field(default_factory=ShapeFn)
    f_v: ShapeFn = field(default_factory=ShapeFn)
    b_phi: ShapeFn = field(default_factory=ShapeFn)
    f_phi: ShapeFn = field(default_factory=ShapeFn)


def source_eval(phi, sigma, spec: SourceSpec, use_cutoff: bool = True):
    """Evaluate (Gamma_v, Gamma_phi); sigma is clamped to [0,1] when use_cutoff."""
    s = cutoff(sigma) if use_cutoff else np.asarray(sigma, dtype=float)
    gamma_v = spec.b_v(phi) * s + spec.f_v(phi)
    gamma_phi = spec.b_phi(phi) * s + spec.f_phi(phi)
    return gamma_v, gamma_phi


def growth_sources(proliferation: float, apoptosis: float, velocity_scale: float = 1.0) -> SourceSpec:
    """Standard demo sources: growth where tumour and nutrient meet.

    Gamma_phi = P * ramp(phi) * sigma - A_ap * ramp(phi) with
    ramp(phi) = clamp((1+phi)/2), and Gamma_v = lambda * Gamma_phi.
    """
    ramp_b = ShapeFn(ShapeKind.CLAMPED_LINEAR, s0=-1.0, y0=0.0, s1=1.0, y1=proliferation)
    ramp_f = ShapeFn(ShapeKind.CLAMPED_LINEAR, s0=-1.0, y0=0.0, s1=1.0, y1=-apoptosis)
    lam = velocity_scale
    return SourceSpec(
        b_v=ShapeFn(ShapeKind.CLAMPED_LINEAR, s0=-1.0, y0=0.0, s1=1.0, y1=lam * proliferation),
        f_v=ShapeFn(ShapeKind.CLAMPED_LINEAR, s0=-1.0, y0=0.0, s1=1.0, y1=-lam * apoptosis),
        b_phi=ramp_b,
        f_phi=ramp_f,
    )


# ---------------------------------------------------------------------------
# Parameter bundle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """All constants and constitutive choices of one model instance.

    A: energy scale, B: gradient-energy coefficient, chi: chemotaxis
    coupling, K: permeability, a: pressure Robin transfer coefficient,
    theta: nutrient regularization in [0, 1] (0 = quasi-static).
    g is the pressure Robin boundary datum: a constant, or a piecewise-
    constant-in-time table [(t0, g0), (t1, g1), ...] applied as g(t) = gi
    for t >= ti.
    """

    A: float = 1.0
    B: float = 5.0e-3
    chi: float = 0.0
    K: float = 1.0
    a: float = 1.0
    theta: float = 0.0
    mobility: MobilitySpec = field(default_factory=MobilitySpec)
    h_spec: NutrientConsumptionSpec = field(default_factory=NutrientConsumptionSpec)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    sources: SourceSpec = field(default_factory=SourceSpec)
    g: float | tuple = 0.0

    def __post_init__(self):
        for name in ("A", "B", "K", "a"):
            if not getattr(self, name) > 0.0:
                raise AdmissibilityError(f"constant {name} must be positive, got {getattr(self, name)}")
        if self.chi < 0.0:
            raise AdmissibilityError(f"chemotaxis coefficient must be >= 0, got {self.chi}")
        if not 0.0 <= self.theta <= 1.0:
            raise AdmissibilityError(f"theta must lie in [0, 1], got {self.theta}")
        validate_constitutive(self)

    def g_at(self, t: float) -> float:
        if isinstance(self.g, (int, float)):
            return float(self.g)
        value = None
        for ti, gi in self.g:
            if t >= ti - 1e-15:
                value = gi
        if value is None:
            raise ValueError(f"boundary datum table does not cover t = {t}")
        return float(value)


def validate_constitutive(params: ModelParams, samples: int = 2001, span: float = 10.0) -> None:
    """Spot-check the constitutive bounds on a sample grid; raise on violation."""
    s = np.linspace(-span, span, samples)

    m = params.mobility(s)
    if np.any(m < params.mobility.m0 - 1e-12) or np.any(m > params.mobility.m1 + 1e-12):
        raise AdmissibilityError("mobility leaves its declared [m0, m1] band")

    h = params.h_spec(s)
    if np.any(h < -1e-12) or np.any(h > 1.0 + 1e-12):
        raise AdmissibilityError("nutrient consumption leaves [0, 1]")

    c1, c2 = params.potential.quadratic_lower_bound()
    psi, _, _ = potential_eval(s, params.potential)
    if np.any(psi < c1 * s * s - c2 - 1e-9):
        raise AdmissibilityError("potential violates its quadratic lower bound")

    for name in ("b_v", "f_v", "b_phi", "f_phi"):
        shape = getattr(params.sources, name)
        vals = shape(s)
        if np.any(np.abs(vals) > shape.sup + 1e-12):
            raise AdmissibilityError(f"source coefficient {name} exceeds its declared sup bound")
