"""Rectangular cell-centered grid, fields, and flux-form difference operators.

Scalars (phase, chemical potential, nutrient, pressure) live at cell
centers; fluxes and velocities live on faces.  The Laplacian is literally
divergence(gradient(.)), so operator factorization and the discrete
divergence theorem hold to round-off, which the verification suite leans
on.  Boundary conditions enter through ghost-value closures:

  neumann-zero        ghost mirrors the interior cell (zero face gradient)
  dirichlet(g)        ghost = 2 g - interior
  robin(a, K, g)      K * dn(f) = a (g - f_face), f_face the face average
  combined-flux-zero  zero total flux; acts like neumann-zero on gradients
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import cutoff


class BCType(Enum):
    NEUMANN_ZERO = "neumann-zero"
    DIRICHLET = "dirichlet"
    ROBIN = "robin"
    COMBINED_FLUX_ZERO = "combined-flux-zero"


@dataclass(frozen=True)
class SideBC:
    kind: BCType
    value: object = 0.0       # datum g: scalar, callable (x, y) -> g, or per-face array
    robin_a: float = 1.0
    robin_k: float = 1.0


@dataclass(frozen=True)
class BCSpec:
    """Boundary condition for one field, one entry per side of the rectangle.

    Production runs use the uniform constructors (one kind on all sides);
    mixed sides exist for quasi-1D verification problems.
    """

    left: SideBC
    right: SideBC
    bottom: SideBC
    top: SideBC

    @staticmethod
    def neumann_zero() -> "BCSpec":
        s = SideBC(BCType.NEUMANN_ZERO)
        return BCSpec(s, s, s, s)

    @staticmethod
    def combined_flux_zero() -> "BCSpec":
        s = SideBC(BCType.COMBINED_FLUX_ZERO)
        return BCSpec(s, s, s, s)

    @staticmethod
    def dirichlet(value) -> "BCSpec":
        s = SideBC(BCType.DIRICHLET, value)
        return BCSpec(s, s, s, s)

    @staticmethod
    def robin(a: float, k: float, value) -> "BCSpec":
        s = SideBC(BCType.ROBIN, value, robin_a=a, robin_k=k)
        return BCSpec(s, s, s, s)

    @property
    def uniform_kind(self) -> BCType | None:
        kinds = {self.left.kind, self.right.kind, self.bottom.kind, self.top.kind}
        return kinds.pop() if len(kinds) == 1 else None

    def sides(self):
        return (("left", self.left), ("right", self.right),
                ("bottom", self.bottom), ("top", self.top))


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"need at least 3 cells per direction, got {self.nx}x{self.ny}")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("domain lengths must be positive")

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    def xc(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    def yc(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    def cell_centers(self):
        return np.meshgrid(self.xc(), self.yc(), indexing="ij")

    def side_face_coords(self, side: str):
        """(x, y) arrays of boundary-face centers on one side."""
        if side == "left":
            return np.zeros(self.ny), self.yc()
        if side == "right":
            return np.full(self.ny, self.Lx), self.yc()
        if side == "bottom":
            return self.xc(), np.zeros(self.nx)
        if side == "top":
            return self.xc(), np.full(self.nx, self.Ly)
        raise ValueError(f"unknown side {side!r}")


@dataclass(frozen=True)
class ScalarField:
    grid: Grid2D
    values: np.ndarray      # shape (nx, ny), [i, j] at ((i+1/2) hx, (j+1/2) hy)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(f"field shape {v.shape} does not match grid "
                             f"({self.grid.nx}, {self.grid.ny})")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class FaceVectorField:
    grid: Grid2D
    fx: np.ndarray          # shape (nx+1, ny), x-faces
    fy: np.ndarray          # shape (nx, ny+1), y-faces

    def __post_init__(self):
        fx = np.asarray(self.fx, dtype=float)
        fy = np.asarray(self.fy, dtype=float)
        if fx.shape != (self.grid.nx + 1, self.grid.ny):
            raise ValueError(f"x-face shape {fx.shape} invalid for grid")
        if fy.shape != (self.grid.nx, self.grid.ny + 1):
            raise ValueError(f"y-face shape {fy.shape} invalid for grid")
        object.__setattr__(self, "fx", fx)
        object.__setattr__(self, "fy", fy)


def constant_field(grid: Grid2D, value: float) -> ScalarField:
    return ScalarField(grid, np.full((grid.nx, grid.ny), float(value)))


def zero_face_field(grid: Grid2D) -> FaceVectorField:
    return FaceVectorField(grid, np.zeros((grid.nx + 1, grid.ny)),
                           np.zeros((grid.nx, grid.ny + 1)))


def check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite entries in {what}")


# ---------------------------------------------------------------------------
# Boundary closures
# ---------------------------------------------------------------------------

def datum_values(grid: Grid2D, side: str, datum) -> np.ndarray:
    """Evaluate a BC datum on the face centers of one side."""
    x, y = grid.side_face_coords(side)
    if callable(datum):
        return np.asarray(datum(x, y), dtype=float) * np.ones_like(x)
    arr = np.asarray(datum, dtype=float)
    if arr.ndim == 0:
        return np.full(x.shape, float(arr))
    if arr.shape != x.shape:
        raise ValueError(f"datum array shape {arr.shape} does not match side {side}")
    return arr


def robin_transfer(sbc: SideBC, h: float) -> float:
    """Effective face transfer coefficient: outward flux K dn(f) = rc (g - f_in)."""
    return 2.0 * sbc.robin_a * sbc.robin_k / (2.0 * sbc.robin_k + sbc.robin_a * h)


def boundary_gradient(grid: Grid2D, side: str, sbc: SideBC, f_in: np.ndarray) -> np.ndarray:
    """Along-axis gradient on one side's boundary faces (not outward-signed)."""
    h = grid.hx if side in ("left", "right") else grid.hy
    outward = 1.0 if side in ("right", "top") else -1.0
    if sbc.kind in (BCType.NEUMANN_ZERO, BCType.COMBINED_FLUX_ZERO):
        return np.zeros_like(f_in)
    g = datum_values(grid, side, sbc.value)
    if sbc.kind is BCType.DIRICHLET:
        return outward * 2.0 * (g - f_in) / h
    rc = robin_transfer(sbc, h)
    return outward * rc * (g - f_in) / sbc.robin_k


def boundary_face_value(grid: Grid2D, side: str, sbc: SideBC, f_in: np.ndarray) -> np.ndarray:
    """Field value on one side's boundary faces implied by the closure."""
    h = grid.hx if side in ("left", "right") else grid.hy
    if sbc.kind in (BCType.NEUMANN_ZERO, BCType.COMBINED_FLUX_ZERO):
        return f_in.copy()
    g = datum_values(grid, side, sbc.value)
    if sbc.kind is BCType.DIRICHLET:
        return g.copy()
    w = 2.0 * sbc.robin_k / h
    return (w * f_in + sbc.robin_a * g) / (w + sbc.robin_a)


# ---------------------------------------------------------------------------
# Difference operators
# ---------------------------------------------------------------------------

def gradient(f: ScalarField, bc: BCSpec) -> FaceVectorField:
    g, v = f.grid, f.values
    gx = np.empty((g.nx + 1, g.ny))
    gy = np.empty((g.nx, g.ny + 1))
    gx[1:-1, :] = (v[1:, :] - v[:-1, :]) / g.hx
    gy[:, 1:-1] = (v[:, 1:] - v[:, :-1]) / g.hy
    gx[0, :] = boundary_gradient(g, "left", bc.left, v[0, :])
    gx[-1, :] = boundary_gradient(g, "right", bc.right, v[-1, :])
    gy[:, 0] = boundary_gradient(g, "bottom", bc.bottom, v[:, 0])
    gy[:, -1] = boundary_gradient(g, "top", bc.top, v[:, -1])
    out = FaceVectorField(g, gx, gy)
    check_finite(gx, "gradient x-faces")
    check_finite(gy, "gradient y-faces")
    return out


def divergence(F: FaceVectorField) -> ScalarField:
    g = F.grid
    d = (F.fx[1:, :] - F.fx[:-1, :]) / g.hx + (F.fy[:, 1:] - F.fy[:, :-1]) / g.hy
    check_finite(d, "divergence")
    return ScalarField(g, d)


def laplacian(f: ScalarField, bc: BCSpec) -> ScalarField:
    """Five-point flux-form Laplacian; exactly divergence(gradient(f))."""
    return divergence(gradient(f, bc))


def apply_cutoff_field(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, cutoff(f.values))


def face_average(f: ScalarField) -> FaceVectorField:
    """Arithmetic cell-to-face average; boundary faces copy the interior cell."""
    g, v = f.grid, f.values
    fx = np.empty((g.nx + 1, g.ny))
    fy = np.empty((g.nx, g.ny + 1))
    fx[1:-1, :] = 0.5 * (v[1:, :] + v[:-1, :])
    fy[:, 1:-1] = 0.5 * (v[:, 1:] + v[:, :-1])
    fx[0, :] = v[0, :]
    fx[-1, :] = v[-1, :]
    fy[:, 0] = v[:, 0]
    fy[:, -1] = v[:, -1]
    return FaceVectorField(g, fx, fy)


def face_boundary_values(f: ScalarField, bc: BCSpec) -> FaceVectorField:
    """Cell-to-face average whose boundary faces honour the BC closure."""
    g, v = f.grid, f.values
    out = face_average(f)
    out.fx[0, :] = boundary_face_value(g, "left", bc.left, v[0, :])
    out.fx[-1, :] = boundary_face_value(g, "right", bc.right, v[-1, :])
    out.fy[:, 0] = boundary_face_value(g, "bottom", bc.bottom, v[:, 0])
    out.fy[:, -1] = boundary_face_value(g, "top", bc.top, v[:, -1])
    return out


# ---------------------------------------------------------------------------
# Quadrature and norms (midpoint rule)
# ---------------------------------------------------------------------------

def integrate(f: ScalarField) -> float:
    return float(np.sum(f.values) * f.grid.cell_area)


def mean(f: ScalarField) -> float:
    return integrate(f) / f.grid.area


def l2_norm(f: ScalarField) -> float:
    return float(np.sqrt(np.sum(f.values ** 2) * f.grid.cell_area))


def linf_norm(f: ScalarField) -> float:
    return float(np.max(np.abs(f.values)))


def h1_seminorm(f: ScalarField, bc: BCSpec) -> float:
    gr = gradient(f, bc)
    s = np.sum(gr.fx ** 2) + np.sum(gr.fy ** 2)
    return float(np.sqrt(s * f.grid.cell_area))


def h1_norm(f: ScalarField, bc: BCSpec) -> float:
    return float(np.hypot(l2_norm(f), h1_seminorm(f, bc)))


def face_l2_norm(F: FaceVectorField) -> float:
    """L2 norm of a face vector field, componentwise face sums."""
    s = np.sum(F.fx ** 2) + np.sum(F.fy ** 2)
    return float(np.sqrt(s * F.grid.cell_area))


def boundary_flux_integral(F: FaceVectorField) -> float:
    """Outward flux integral over the whole boundary."""
    g = F.grid
    out = (np.sum(F.fx[-1, :]) - np.sum(F.fx[0, :])) * g.hy
    out += (np.sum(F.fy[:, -1]) - np.sum(F.fy[:, 0])) * g.hx
    return float(out)


def boundary_l2_norm(values_by_side: dict) -> float:
    """L2 norm over the boundary from per-side face values and lengths.

    values_by_side maps side name to (values, face_length).
    """
    s = 0.0
    for _, (vals, dl) in values_by_side.items():
        s += float(np.sum(np.asarray(vals) ** 2) * dl)
    return float(np.sqrt(s))


# ---------------------------------------------------------------------------
# Snapshot files: header "nx,ny,Lx,Ly,t", then row-major values, 17 sig digits
# ---------------------------------------------------------------------------

def save_field(path, f: ScalarField, t: float) -> None:
    g = f.grid
    with open(path, "w") as fh:
        fh.write(f"{g.nx},{g.ny},{g.Lx:.17g},{g.Ly:.17g},{t:.17g}\n")
        for i in range(g.nx):
            fh.write(",".join(f"{v:.17g}" for v in f.values[i, :]) + "\n")


def load_field(path) -> tuple[ScalarField, float]:
    with open(path) as fh:
        head = fh.readline().strip().split(",")
        nx, ny = int(head[0]), int(head[1])
        Lx, Ly, t = float(head[2]), float(head[3]), float(head[4])
        vals = np.loadtxt(fh, delimiter=",", ndmin=2)
    if vals.shape != (nx, ny):
        raise ValueError(f"snapshot body {vals.shape} does not match header ({nx}, {ny})")
    return ScalarField(Grid2D(nx, ny, Lx, Ly), vals), t
