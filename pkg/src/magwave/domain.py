"""Cross-section geometry, waveguide grids and the admissible class.

The cross-section Omega' is either an axis-aligned rectangle centred at the
origin or a disk.  Rectangles carry a second-order boundary description (one
sample list per side, corners shared by the two adjacent sides) so that
normal derivatives and boundary quadrature are available.  Disks are
represented by masking and are only used for eigenvalue computations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

__all__ = [
    "CrossSection",
    "WaveguideGrid",
    "GeometryError",
    "EigenSolverError",
    "rectangle",
    "disk",
    "poincare_constant",
    "dirichlet_laplacian",
    "admissibility_margin",
    "admissibility_bound",
    "sampled_sup_norm",
]


class GeometryError(ValueError):
    """Raised when a grid or cross-section cannot be built as requested."""


class EigenSolverError(RuntimeError):
    """Raised when inverse power iteration fails to converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last relative change {residual:.3e})")
        self.residual = residual


def _nodes_per_side(length: float, h: float) -> int:
    n = length / h
    m = int(round(n))
    if m < 2 or abs(n - m) > 1e-9 * max(1.0, n):
        raise GeometryError(f"spacing {h} does not divide length {length}")
    return m


@dataclass(frozen=True)
class CrossSection:
    """Discretised cross-section with grid spacing ``h`` in both directions.

    Nodes live on the tensor grid ``x2[i] x x3[j]``.  ``interior`` marks the
    unknowns of a homogeneous Dirichlet problem, ``boundary`` the nodes that
    carry Dirichlet data.
    """

    shape: str
    h: float
    half_widths: tuple[float, float] | None = None
    radius: float | None = None
    x2: np.ndarray = field(init=False, repr=False, compare=False)
    x3: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.h <= 0:
            raise GeometryError("grid spacing must be positive")
        if self.shape == "rectangle":
            if self.half_widths is None:
                raise GeometryError("rectangle needs half widths")
            a2, a3 = self.half_widths
            n2 = _nodes_per_side(2 * a2, self.h)
            n3 = _nodes_per_side(2 * a3, self.h)
            if n2 % 2 or n3 % 2:
                raise GeometryError("the origin must be a grid node; use an even node count")
            x2 = np.linspace(-a2, a2, n2 + 1)
            x3 = np.linspace(-a3, a3, n3 + 1)
        elif self.shape == "disk":
            if self.radius is None or self.radius <= 0:
                raise GeometryError("disk needs a positive radius")
            m = int(np.ceil(self.radius / self.h)) + 1
            x2 = self.h * np.arange(-m, m + 1, dtype=float)
            x3 = x2.copy()
        else:
            raise GeometryError(f"unknown cross-section shape {self.shape!r}")
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "x3", x3)

    # -- node sets -----------------------------------------------------
    @property
    def n2(self) -> int:
        return self.x2.size

    @property
    def n3(self) -> int:
        return self.x3.size

    @property
    def node_shape(self) -> tuple[int, int]:
        return (self.n2, self.n3)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x2, self.x3, indexing="ij")

    @cached_property
    def interior(self) -> np.ndarray:
        X2, X3 = self.mesh
        if self.shape == "rectangle":
            mask = np.zeros(self.node_shape, dtype=bool)
            mask[1:-1, 1:-1] = True
            return mask
        return np.hypot(X2, X3) < self.radius * (1 - 1e-12)

    @cached_property
    def boundary(self) -> np.ndarray:
        """Non-interior nodes with at least one interior 4-neighbour."""
        inner = self.interior
        near = np.zeros_like(inner)
        near[1:, :] |= inner[:-1, :]
        near[:-1, :] |= inner[1:, :]
        near[:, 1:] |= inner[:, :-1]
        near[:, :-1] |= inner[:, 1:]
        return near & ~inner

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    @cached_property
    def enclosing_radius(self) -> float:
        """Smallest R with Omega' contained in the closed ball B(0, R)."""
        if self.shape == "rectangle":
            return float(np.hypot(*self.half_widths))
        return float(self.radius)

    @cached_property
    def inscribed_radius(self) -> float:
        if self.shape == "rectangle":
            return float(min(self.half_widths))
        return float(self.radius)

    def contains(self, y2, y3) -> np.ndarray:
        """Closed-domain membership test for arbitrary points."""
        y2 = np.asarray(y2, dtype=float)
        y3 = np.asarray(y3, dtype=float)
        if self.shape == "rectangle":
            a2, a3 = self.half_widths
            return (np.abs(y2) <= a2 + 1e-14) & (np.abs(y3) <= a3 + 1e-14)
        return np.hypot(y2, y3) <= self.radius + 1e-14

    # -- quadrature ----------------------------------------------------
    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal area weights over the closed cross-section."""
        if self.shape == "rectangle":
            w2 = np.full(self.n2, self.h)
            w3 = np.full(self.n3, self.h)
            w2[[0, -1]] *= 0.5
            w3[[0, -1]] *= 0.5
            return np.outer(w2, w3)
        return np.where(self.interior, self.h * self.h, 0.0)

    # -- lateral boundary samples (rectangles only) --------------------
    @cached_property
    def sides(self) -> "BoundarySamples":
        if self.shape != "rectangle":
            raise NotImplementedError(
                "boundary traces are implemented for rectangular cross-sections only"
            )
        n2, n3 = self.n2, self.n3
        i2, i3, nu, step, w = [], [], [], [], []
        specs = [
            # (fixed axis, fixed index, normal, inward step)
            (0, 0, (-1.0, 0.0), (1, 0)),
            (0, n2 - 1, (1.0, 0.0), (-1, 0)),
            (1, 0, (0.0, -1.0), (0, 1)),
            (1, n3 - 1, (0.0, 1.0), (0, -1)),
        ]
        for axis, idx, normal, inward in specs:
            count = n3 if axis == 0 else n2
            run = np.arange(count)
            if axis == 0:
                a, b = np.full(count, idx), run
            else:
                a, b = run, np.full(count, idx)
            weights = np.full(count, self.h)
            weights[[0, -1]] *= 0.5
            i2.append(a)
            i3.append(b)
            nu.append(np.tile(normal, (count, 1)))
            step.append(np.tile(inward, (count, 1)))
            w.append(weights)
        return BoundarySamples(
            i2=np.concatenate(i2),
            i3=np.concatenate(i3),
            normal=np.concatenate(nu),
            inward=np.concatenate(step).astype(int),
            weight=np.concatenate(w),
            x2=self.x2[np.concatenate(i2)],
            x3=self.x3[np.concatenate(i3)],
        )

    def scaled(self, s: float) -> "CrossSection":
        if self.shape == "rectangle":
            a2, a3 = self.half_widths
            return CrossSection("rectangle", self.h * s, half_widths=(a2 * s, a3 * s))
        return CrossSection("disk", self.h * s, radius=self.radius * s)


@dataclass(frozen=True)
class BoundarySamples:
    """Lateral boundary samples of a rectangle, side by side.

    Corners appear once per adjacent side with that side's normal; the
    trapezoid weights make the arc-length quadrature exact for the perimeter.
    """

    i2: np.ndarray
    i3: np.ndarray
    normal: np.ndarray
    inward: np.ndarray
    weight: np.ndarray
    x2: np.ndarray
    x3: np.ndarray

    @property
    def size(self) -> int:
        return self.i2.size


def rectangle(half_width_2: float = 0.5, half_width_3: float = 0.5, h: float = 1 / 16) -> CrossSection:
    return CrossSection("rectangle", h, half_widths=(half_width_2, half_width_3))


def disk(radius: float = 1.0, h: float = 1 / 16) -> CrossSection:
    return CrossSection("disk", h, radius=radius)


@dataclass(frozen=True)
class WaveguideGrid:
    """Space-time grid on the period cell (0, T) x (0, 1) x Omega'."""

    cs: CrossSection
    n1: int
    T: float
    n_t: int

    def __post_init__(self) -> None:
        if self.n1 < 1 or self.n_t < 1:
            raise GeometryError("n1 and n_t must be positive")
        if self.T <= 0:
            raise GeometryError("time horizon must be positive")

    @property
    def h1(self) -> float:
        return 1.0 / self.n1

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @cached_property
    def x1(self) -> np.ndarray:
        return np.arange(self.n1) / self.n1

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @property
    def node_shape(self) -> tuple[int, int, int]:
        return (self.n1,) + self.cs.node_shape

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.cs.x2, self.cs.x3, indexing="ij")

    @cached_property
    def interior(self) -> np.ndarray:
        return np.broadcast_to(self.cs.interior, self.node_shape)

    @cached_property
    def weights(self) -> np.ndarray:
        """Cell quadrature: uniform in x1, trapezoidal across the section."""
        return np.broadcast_to(self.h1 * self.cs.weights, self.node_shape)

    @cached_property
    def time_weights(self) -> np.ndarray:
        w = np.full(self.n_t + 1, self.dt)
        w[[0, -1]] *= 0.5
        return w

    def with_time(self, T: float | None = None, n_t: int | None = None) -> "WaveguideGrid":
        return WaveguideGrid(self.cs, self.n1, self.T if T is None else T, self.n_t if n_t is None else n_t)


# ----------------------------------------------------------------------
# Dirichlet eigenvalues
# ----------------------------------------------------------------------
def dirichlet_laplacian(cs: CrossSection) -> sp.csc_matrix:
    """Positive Dirichlet Laplacian on the interior nodes.

    Rectangles use the five-point stencil.  Disks use the Shortley-Weller
    stencil, which keeps second order at the curved boundary at the price of
    a non-symmetric matrix.
    """
    inner = cs.interior
    index = -np.ones(cs.node_shape, dtype=int)
    index[inner] = np.arange(inner.sum())
    h = cs.h
    rows = []
    I2, I3 = np.nonzero(inner)
    X2, X3 = cs.mesh
    for axis in (0, 1):
        for sign in (-1, 1):
            J2 = I2 + (sign if axis == 0 else 0)
            J3 = I3 + (sign if axis == 1 else 0)
            nb_inner = inner[J2, J3]
            # distance to the boundary along this direction
            if cs.shape == "disk":
                px, py = X2[I2, I3], X3[I2, I3]
                dist = np.where(nb_inner, h, _ray_to_circle(px, py, axis, sign, cs.radius))
            else:
                dist = np.full(I2.size, h)
            rows.append((I2, I3, J2, J3, nb_inner, dist))
    # assemble: -u'' ~ 2/(hl+hr) * ((u - ur)/hr + (u - ul)/hl)
    n = inner.sum()
    diag = np.zeros(n)
    r_idx, c_idx, v = [], [], []
    for axis in (0, 1):
        lo = rows[2 * axis]
        hi = rows[2 * axis + 1]
        hl, hr = lo[5], hi[5]
        scale = 2.0 / (hl + hr)
        me = index[I2, I3]
        for part, dist in ((lo, hl), (hi, hr)):
            diag += scale / dist
            nb = part[4]
            r_idx.append(me[nb])
            c_idx.append(index[part[2][nb], part[3][nb]])
            v.append(-(scale / dist)[nb])
    r_idx.append(np.arange(n))
    c_idx.append(np.arange(n))
    v.append(diag)
    return sp.csc_matrix(
        (np.concatenate(v), (np.concatenate(r_idx), np.concatenate(c_idx))), shape=(n, n)
    )


def _ray_to_circle(px, py, axis, sign, radius):
    """Distance from interior points to the circle along +-e_axis."""
    along = px if axis == 0 else py
    across = py if axis == 0 else px
    reach = np.sqrt(np.maximum(radius**2 - across**2, 0.0))
    d = sign * reach - along
    return np.abs(d)


def poincare_constant(cs: CrossSection, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Reciprocal of the smallest discrete Dirichlet eigenvalue of ``cs``.

    Shifted inverse power iteration (shift zero) with a sparse LU factor;
    stops when the eigenvalue estimate changes by less than ``tol`` relative.
    """
    L = dirichlet_laplacian(cs)
    lu = spl.splu(L.tocsc())
    X2, X3 = cs.mesh
    # positive start vector with a large ground-state component
    x = np.cos(0.5 * np.pi * X2 / (np.abs(X2).max() + cs.h)) * np.cos(
        0.5 * np.pi * X3 / (np.abs(X3).max() + cs.h)
    )
    x = x[cs.interior]
    x /= np.linalg.norm(x)
    lam = np.inf
    change = np.inf
    for _ in range(max_iter):
        y = lu.solve(x)
        new = float(np.dot(x, x) / np.dot(x, y))
        y /= np.linalg.norm(y)
        change = abs(new - lam) / abs(new)
        lam, x = new, y
        if change < tol:
            return 1.0 / lam
    raise EigenSolverError("inverse power iteration did not converge", change)


# ----------------------------------------------------------------------
# Admissible class
# ----------------------------------------------------------------------
def admissibility_bound(cs: CrossSection, C: float | None = None) -> float:
    """(sqrt(2) - 1) / sqrt(C(Omega'))."""
    if C is None:
        C = poincare_constant(cs)
    return (np.sqrt(2.0) - 1.0) / np.sqrt(C)


def sampled_sup_norm(A, cs: CrossSection, refine: int = 4, n1: int = 16) -> float:
    """Sampled sup of |A| over (0,1) x Omega' on a grid ``refine`` times finer.

    Sampling gives a lower bound of the true sup-norm.
    """
    fine = cs.h / refine
    if cs.shape == "rectangle":
        a2, a3 = cs.half_widths
        y2 = np.linspace(-a2, a2, int(round(2 * a2 / fine)) + 1)
        y3 = np.linspace(-a3, a3, int(round(2 * a3 / fine)) + 1)
    else:
        y2 = np.arange(-cs.radius, cs.radius + fine / 2, fine)
        y3 = y2
    y1 = np.arange(n1 * refine) / (n1 * refine)
    Y1, Y2, Y3 = np.meshgrid(y1, y2, y3, indexing="ij")
    inside = cs.contains(Y2, Y3)
    a = A.values(Y1[inside], Y2[inside], Y3[inside])
    return float(np.sqrt(sum(c**2 for c in a)).max(initial=0.0))


def admissibility_margin(A, cs: CrossSection, C: float | None = None, sup_norm: float | None = None) -> float:
    """(sqrt(2)-1)/sqrt(C(Omega')) minus the sampled sup-norm of A.

    Positive iff A lies in the admissible class at sampling resolution.
    """
    if sup_norm is None:
        sup_norm = sampled_sup_norm(A, cs)
    return admissibility_bound(cs, C) - sup_norm
