"""Fibered magnetic Schrodinger solver on the period cell.

The magnetic Laplacian ``(grad + iA)^2`` is discretised with link variables:
the hop from node p to its neighbour q carries the phase
``exp(i * integral of A along the edge)``.  The resulting matrix is exactly
Hermitian, second order accurate, and transforms covariantly under discrete
gauge changes.  The quasi-periodic wrap in x1 multiplies hops across the cell
face by ``exp(+-i theta)``.

Time stepping is Crank-Nicolson.  With ``L`` the discrete magnetic Laplacian
the forward scheme for ``(i d_t + L) w = f`` reads::

    (I - i dt L / 2) w[n+1] = (I + i dt L / 2) w[n] - i dt f[n+1/2]

and the backward scheme solves the same relation for ``w[n]`` from
``w[n+1]``.  Both orientations therefore share one discrete equation, which
is what makes the discrete Green identity and lift subtraction exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Protocol

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .domain import WaveguideGrid
from .fields import MagneticPotential, ZERO_POTENTIAL

__all__ = [
    "FiberOperator",
    "FiberField",
    "SourceTerm",
    "Lift",
    "SolverError",
    "assemble_operator",
    "solve_source",
    "solve_dirichlet",
    "cauchy_evolve",
    "march",
    "lift_residual",
    "discrete_residual",
    "covariant_gradient_norms",
    "dirichlet_mode",
    "cayley_phase",
    "FORWARD",
    "BACKWARD",
]

FORWARD = "forward"
BACKWARD = "backward"

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


class SolverError(RuntimeError):
    """A Crank-Nicolson step could not be solved to the requested residual."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(f"{message}; residual history {['%.2e' % r for r in history]}")
        self.history = history


# ----------------------------------------------------------------------
# operator assembly
# ----------------------------------------------------------------------
def _edge_phases(A: MagneticPotential, grid: WaveguideGrid) -> list[np.ndarray]:
    """Integral of a_d along the edge from each node to its +e_d neighbour."""
    X1, X2, X3 = grid.mesh
    steps = (grid.h1, grid.cs.h, grid.cs.h)
    out = []
    for d, comp in enumerate(A.components):
        if comp.is_zero:
            out.append(np.zeros(grid.node_shape))
            continue
        acc = np.zeros(grid.node_shape)
        for s, w in zip(_GL_NODES, _GL_WEIGHTS):
            shift = [0.0, 0.0, 0.0]
            shift[d] = s * steps[d]
            acc += w * comp(X1 + shift[0], X2 + shift[1], X3 + shift[2])
        out.append(acc * steps[d])
    return out


@dataclass(frozen=True, eq=False)
class FiberOperator:
    """Discrete magnetic Laplacian for one fiber theta on a waveguide grid.

    ``full`` maps all node values (interior and Dirichlet nodes) to the
    Laplacian at interior nodes; ``interior_block`` is its square part on
    the unknowns.
    """

    grid: WaveguideGrid
    A: MagneticPotential
    theta: float
    full: sp.csr_matrix = field(repr=False)
    interior_index: np.ndarray = field(repr=False)
    phases: list = field(repr=False)

    @cached_property
    def interior_block(self) -> sp.csc_matrix:
        return self.full[:, self.interior_index].tocsc()

    @property
    def n_interior(self) -> int:
        return self.interior_index.size

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.grid.node_shape))

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Laplacian of a full node array, returned on the full node shape (zero off the interior)."""
        out = np.zeros(self.n_nodes, dtype=complex)
        out[self.interior_index] = self.full @ u.reshape(-1)
        return out.reshape(self.grid.node_shape)

    def to_interior(self, u: np.ndarray) -> np.ndarray:
        return u.reshape(-1)[self.interior_index]

    def from_interior(self, v: np.ndarray, boundary: np.ndarray | None = None) -> np.ndarray:
        out = np.zeros(self.n_nodes, dtype=complex) if boundary is None else boundary.astype(complex).reshape(-1).copy()
        out[self.interior_index] = v
        return out.reshape(self.grid.node_shape)


def assemble_operator(A: MagneticPotential | None, theta: float, grid: WaveguideGrid) -> FiberOperator:
    """Assemble the discrete magnetic Laplacian with theta-quasi-periodic wrap."""
    if A is None:
        A = ZERO_POTENTIAL
    shape = grid.node_shape
    n1, n2, n3 = shape
    inner = np.asarray(grid.interior)
    flat = np.arange(n1 * n2 * n3).reshape(shape)
    interior_index = flat[inner]
    row_of = -np.ones(n1 * n2 * n3, dtype=int)
    row_of[interior_index] = np.arange(interior_index.size)

    phases = _edge_phases(A, grid)
    I1, I2, I3 = np.nonzero(inner)
    rows = row_of[flat[I1, I2, I3]]
    steps = (grid.h1, grid.cs.h, grid.cs.h)

    r_list, c_list, v_list = [rows], [flat[I1, I2, I3]], [np.full(rows.size, -2.0 * sum(1 / s**2 for s in steps), complex)]
    for d in range(3):
        for sign in (1, -1):
            J = [I1.copy(), I2.copy(), I3.copy()]
            J[d] = J[d] + sign
            wrap = np.ones(rows.size, dtype=complex)
            if d == 0:
                over = J[0] >= n1
                under = J[0] < 0
                J[0] = J[0] % n1
                wrap[over] = np.exp(1j * theta)
                wrap[under] = np.exp(-1j * theta)
            if sign == 1:
                link = np.exp(1j * phases[d][I1, I2, I3])
            else:
                link = np.exp(-1j * phases[d][J[0], J[1], J[2]])
            r_list.append(rows)
            c_list.append(flat[J[0], J[1], J[2]])
            v_list.append(wrap * link / steps[d] ** 2)
    full = sp.csr_matrix(
        (np.concatenate(v_list), (np.concatenate(r_list), np.concatenate(c_list))),
        shape=(interior_index.size, n1 * n2 * n3),
    )
    full.sum_duplicates()
    return FiberOperator(grid, A, float(theta), full, interior_index, phases)


# ----------------------------------------------------------------------
# fields and sources
# ----------------------------------------------------------------------
@dataclass
class FiberField:
    """Complex space-time field u[t, x1, x2, x3] on all grid nodes."""

    grid: WaveguideGrid
    theta: float
    values: np.ndarray
    orientation: str = FORWARD

    def norms_in_time(self) -> np.ndarray:
        """||u(t_n)||_{L^2(cell)} for every time level."""
        w = np.asarray(self.grid.weights)
        return np.sqrt(np.einsum("tabc,abc->t", np.abs(self.values) ** 2, w))

    def l2(self) -> float:
        """Space-time L^2 norm, trapezoidal in t."""
        return float(np.sqrt(np.dot(self.grid.time_weights, self.norms_in_time() ** 2)))

    def grad_l2(self) -> float:
        """Space-time L^2 norm of the (plain) gradient, edge differences."""
        return float(np.sqrt(np.dot(self.grid.time_weights, _grad_sq(self.values, self.grid, self.theta))))

    def ghost(self) -> np.ndarray:
        """Values at x1 = 1 read through the quasi-periodic wrap."""
        return np.exp(1j * self.theta) * self.values[:, 0]

    def __sub__(self, other: "FiberField") -> "FiberField":
        return FiberField(self.grid, self.theta, self.values - other.values, self.orientation)


def _grad_sq(values: np.ndarray, grid: WaveguideGrid, theta: float) -> np.ndarray:
    """Per time level squared L^2 norm of the edge gradient."""
    h1, h = grid.h1, grid.cs.h
    cell = h1 * h * h
    nxt = np.roll(values, -1, axis=1)
    nxt[:, -1] *= np.exp(1j * theta)
    d1 = (nxt - values) / h1
    d2 = np.diff(values, axis=2) / h
    d3 = np.diff(values, axis=3) / h
    return cell * (
        np.sum(np.abs(d1) ** 2, axis=(1, 2, 3))
        + np.sum(np.abs(d2) ** 2, axis=(1, 2, 3))
        + np.sum(np.abs(d3) ** 2, axis=(1, 2, 3))
    )


class Lift(Protocol):
    """Smooth extension of Dirichlet data: ``values(t)`` on all grid nodes."""

    def values(self, t: float) -> np.ndarray: ...


@dataclass
class SourceTerm:
    """Source f(t, x) as a callable returning a full node array.

    Half-step values are the trapezoidal averages of the endpoint samples.
    ``dfunc`` optionally provides d_t f for the W^{1,1} time regularity check.
    """

    func: Callable[[float], np.ndarray]
    dfunc: Callable[[float], np.ndarray] | None = None

    def half_steps(self, grid: WaveguideGrid) -> Iterator[np.ndarray]:
        prev = np.asarray(self.func(grid.t[0]), dtype=complex)
        for n in range(grid.n_t):
            nxt = np.asarray(self.func(grid.t[n + 1]), dtype=complex)
            yield 0.5 * (prev + nxt)
            prev = nxt


@dataclass
class HalfStepSource:
    """Source given directly by its half-step values, shape (n_t, n1, n2, n3)."""

    data: np.ndarray

    def half_steps(self, grid: WaveguideGrid) -> Iterator[np.ndarray]:
        for n in range(grid.n_t):
            yield self.data[n]


def lift_residual(op: FiberOperator, W0: np.ndarray, W1: np.ndarray, dt: float) -> np.ndarray:
    """Discrete residual i(W1 - W0)/dt + L (W0 + W1)/2 at interior nodes (full shape)."""
    r = 1j * (W1 - W0) / dt + 0.5 * op.apply(W0 + W1)
    out = np.zeros(op.grid.node_shape, dtype=complex)
    inner = np.asarray(op.grid.interior)
    out[inner] = r[inner]
    return out


@dataclass
class _LiftSource:
    op: FiberOperator
    lift: Lift

    def half_steps(self, grid: WaveguideGrid) -> Iterator[np.ndarray]:
        prev = np.asarray(self.lift.values(grid.t[0]), dtype=complex)
        for n in range(grid.n_t):
            nxt = np.asarray(self.lift.values(grid.t[n + 1]), dtype=complex)
            yield lift_residual(self.op, prev, nxt, grid.dt)
            prev = nxt


# ----------------------------------------------------------------------
# Crank-Nicolson
# ----------------------------------------------------------------------
class _Stepper:
    def __init__(self, op: FiberOperator, dt: float, orientation: str, tol: float):
        L = op.interior_block
        eye = sp.identity(op.n_interior, dtype=complex, format="csc")
        minus = (eye - 0.5j * dt * L).tocsc()
        plus = (eye + 0.5j * dt * L).tocsc()
        if orientation == FORWARD:
            self.implicit, self.explicit, self.sign = minus, plus, -1.0
        elif orientation == BACKWARD:
            self.implicit, self.explicit, self.sign = plus, minus, 1.0
        else:
            raise ValueError(f"orientation must be {FORWARD!r} or {BACKWARD!r}")
        self.lu = spl.splu(self.implicit)
        self.dt = dt
        self.tol = tol

    def step(self, w: np.ndarray, f: np.ndarray | None) -> np.ndarray:
        rhs = self.explicit @ w
        if f is not None:
            rhs = rhs + self.sign * 1j * self.dt * f
        scale = np.linalg.norm(rhs)
        if scale == 0.0:
            return np.zeros_like(rhs)
        x = self.lu.solve(rhs)
        history = []
        for _ in range(4):
            res = rhs - self.implicit @ x
            rel = np.linalg.norm(res) / scale
            history.append(float(rel))
            if rel <= self.tol:
                return x
            x = x + self.lu.solve(res)
        raise SolverError("Crank-Nicolson step did not reach the residual tolerance", history)


def march(
    op: FiberOperator,
    source=None,
    orientation: str = FORWARD,
    start: np.ndarray | None = None,
    tol: float = 1e-10,
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(n, w[n])`` on the interior unknowns in stepping order.

    ``start`` is the initial (forward) or terminal (backward) interior state,
    zero by default.  Steps with zero state and zero source are skipped
    without a solve, which is exact.
    """
    grid = op.grid
    n_t = grid.n_t
    w = np.zeros(op.n_interior, dtype=complex) if start is None else np.asarray(start, complex).copy()
    halves: list | Iterator
    if source is None:
        halves = None
    elif orientation == FORWARD:
        halves = source.half_steps(grid)
    else:
        # the backward sweep consumes half-steps from the end
        halves = list(source.half_steps(grid))
    stepper = None
    order = range(n_t) if orientation == FORWARD else range(n_t - 1, -1, -1)
    first = 0 if orientation == FORWARD else n_t
    yield first, w
    for n in order:
        if halves is None:
            f = None
        elif orientation == FORWARD:
            f = op.to_interior(next(halves))
        else:
            f = op.to_interior(halves[n])
        quiet = (f is None or not np.any(f)) and not np.any(w)
        if not quiet:
            if stepper is None:
                stepper = _Stepper(op, grid.dt, orientation, tol)
            w = stepper.step(w, f)
        yield (n + 1 if orientation == FORWARD else n), w


def _collect(op: FiberOperator, it, orientation: str, boundary: Callable[[int], np.ndarray] | None = None) -> FiberField:
    grid = op.grid
    vals = np.zeros((grid.n_t + 1,) + grid.node_shape, dtype=complex)
    for n, w in it:
        vals[n] = op.from_interior(w, None if boundary is None else boundary(n))
    return FiberField(grid, op.theta, vals, orientation)


def solve_source(
    op: FiberOperator, source, orientation: str = FORWARD, tol: float = 1e-10
) -> FiberField:
    """Solve (i d_t + Delta_A) w = f with zero lateral data.

    Forward: w(0) = 0.  Backward: w(T) = 0 (the time-reversed problem).
    """
    return _collect(op, march(op, source, orientation, tol=tol), orientation)


def cauchy_evolve(op: FiberOperator, u0: np.ndarray, tol: float = 1e-10) -> FiberField:
    """Homogeneous evolution from a Dirichlet-compatible initial state (full node array)."""
    u0 = np.asarray(u0, dtype=complex)
    return _collect(op, march(op, None, FORWARD, start=op.to_interior(u0), tol=tol), FORWARD)


def solve_dirichlet(op: FiberOperator, lift: Lift, orientation: str = FORWARD, tol: float = 1e-10) -> FiberField:
    """u = W - solve_source(residual of W): homogeneous solution with u = W on the boundary.

    The lift must vanish at the initial (forward) or terminal (backward) time.
    """
    grid = op.grid
    correction = solve_source(op, _LiftSource(op, lift), orientation, tol)
    W = np.stack([np.asarray(lift.values(t), dtype=complex) for t in grid.t])
    return FiberField(grid, op.theta, W - correction.values, orientation)


def dirichlet_march(
    op: FiberOperator, lift: Lift, orientation: str = FORWARD, tol: float = 1e-10
) -> Iterator[tuple[int, np.ndarray]]:
    """Streaming version of :func:`solve_dirichlet`: yields ``(n, u[n])`` on all nodes."""
    grid = op.grid
    for n, w in march(op, _LiftSource(op, lift), orientation, tol=tol):
        W = np.asarray(lift.values(grid.t[n]), dtype=complex)
        yield n, W - op.from_interior(w)


def discrete_residual(op: FiberOperator, u: FiberField, source=None) -> np.ndarray:
    """Per half-step max-norm of the discrete equation residual at interior nodes."""
    grid = op.grid
    halves = source.half_steps(grid) if source is not None else None
    out = np.empty(grid.n_t)
    for n in range(grid.n_t):
        r = lift_residual(op, u.values[n], u.values[n + 1], grid.dt)
        if halves is not None:
            r = r - next(halves)
        out[n] = np.abs(r[np.asarray(grid.interior)]).max(initial=0.0)
    return out


def covariant_gradient_norms(op: FiberOperator, u: np.ndarray) -> tuple[float, float]:
    """(||grad u||, ||grad_A u||) for a node array vanishing on the lateral boundary.

    Both use forward edge differences; the covariant one carries the link
    phase, ``(U u_q - u_p) / h``.
    """
    grid = op.grid
    steps = (grid.h1, grid.cs.h, grid.cs.h)
    cell = grid.h1 * grid.cs.h**2
    plain = 0.0
    covariant = 0.0
    for d in range(3):
        q = np.roll(u, -1, axis=d)
        U = np.exp(1j * op.phases[d])
        if d == 0:
            q = q.copy()
            q[-1] *= np.exp(1j * op.theta)
            p = u
        else:
            sl = [slice(None)] * 3
            sl[d] = slice(0, -1)
            sl = tuple(sl)
            q, p, U = q[sl], u[sl], U[sl]
        plain += cell * np.sum(np.abs(q - p) ** 2) / steps[d] ** 2
        covariant += cell * np.sum(np.abs(U * q - p) ** 2) / steps[d] ** 2
    return float(np.sqrt(plain)), float(np.sqrt(covariant))


def dirichlet_mode(grid: WaveguideGrid, theta: float, m: int = 0, p: int = 1, q: int = 1) -> tuple[np.ndarray, float, float]:
    """Quasi-periodic Dirichlet eigenmode of the free Laplacian on a rectangle.

    Returns ``(e, lam_h, lam)`` with ``e = exp(i (theta + 2 pi m) x1)
    sin(p pi s2) sin(q pi s3)`` (s the coordinates mapped to (0, 1)), the
    discrete eigenvalue ``lam_h`` (``L e = -lam_h e`` exactly) and its
    continuum counterpart.
    """
    cs = grid.cs
    if cs.shape != "rectangle":
        raise ValueError("closed-form modes exist for rectangles only")
    a2, a3 = cs.half_widths
    X1, X2, X3 = grid.mesh
    k1 = theta + 2 * np.pi * m
    k2 = p * np.pi / (2 * a2)
    k3 = q * np.pi / (2 * a3)
    e = np.exp(1j * k1 * X1) * np.sin(k2 * (X2 + a2)) * np.sin(k3 * (X3 + a3))
    e[~np.asarray(grid.interior)] = 0.0
    h1, h = grid.h1, cs.h
    lam_h = (2 - 2 * np.cos(k1 * h1)) / h1**2 + (4 / h**2) * (np.sin(k2 * h / 2) ** 2 + np.sin(k3 * h / 2) ** 2)
    lam = k1**2 + k2**2 + k3**2
    return e, float(lam_h), float(lam)


def cayley_phase(lam: float, dt: float) -> float:
    """Discrete frequency mu with exp(-i mu dt) the Crank-Nicolson factor for -lam."""
    return float(2.0 / dt * np.arctan(lam * dt / 2.0))
