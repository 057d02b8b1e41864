"""Fibered Dirichlet-to-Neumann traces, pairings and norm surrogates.

The magnetic Neumann trace ``(d_nu + i A.nu) u`` is taken at the lateral
boundary samples of a rectangular cross-section with the three-point
one-sided difference for ``d_nu`` (second order).  Traces live on the
lateral boundary of the period cell and are paired in discrete
L^2: trapezoid in t, uniform in x1, trapezoid arc length on each side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .domain import WaveguideGrid
from .fields import MagneticPotential, PotentialPair
from .pde import (
    BACKWARD,
    FORWARD,
    FiberField,
    FiberOperator,
    assemble_operator,
    dirichlet_march,
    solve_dirichlet,
    solve_source,
)

__all__ = [
    "LateralTrace",
    "PairingRecord",
    "dn_apply",
    "dn_apply_level",
    "dn_response",
    "dn_pair",
    "dn_norm_estimate",
    "NormEstimate",
    "xtheta_norm_surrogate",
    "spatial_h2_sq",
    "green_check",
    "write_pairings",
    "PAIRING_COLUMNS",
]


@dataclass
class LateralTrace:
    """Complex samples on (0, T) x (0, 1) x boundary, shape (n_t + 1, n1, n_b)."""

    grid: WaveguideGrid
    values: np.ndarray

    def _weights(self) -> np.ndarray:
        g = self.grid
        return g.time_weights[:, None, None] * g.h1 * g.cs.sides.weight[None, None, :]

    def inner(self, other: "LateralTrace | np.ndarray") -> complex:
        """<self, other> = sum self * conj(other) * weights."""
        b = other.values if isinstance(other, LateralTrace) else np.asarray(other)
        return complex(np.sum(self.values * np.conj(b) * self._weights()))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2 * self._weights())))

    def __sub__(self, other: "LateralTrace") -> "LateralTrace":
        return LateralTrace(self.grid, self.values - other.values)


def _boundary_potential(A: MagneticPotential, grid: WaveguideGrid) -> np.ndarray:
    """A'.nu at the boundary samples, shape (n1, n_b)."""
    sides = grid.cs.sides
    x1 = grid.x1[:, None]
    a2 = A.a2(x1, sides.x2[None, :], sides.x3[None, :])
    a3 = A.a3(x1, sides.x2[None, :], sides.x3[None, :])
    return np.broadcast_to(a2 * sides.normal[:, 0] + a3 * sides.normal[:, 1], (grid.n1, sides.size))


def dn_apply_level(u: np.ndarray, grid: WaveguideGrid, A_nu: np.ndarray | None = None) -> np.ndarray:
    """Magnetic Neumann trace of one time level ``u`` (shape n1 x n2 x n3)."""
    sides = grid.cs.sides
    s2, s3 = sides.inward[:, 0], sides.inward[:, 1]
    u0 = u[:, sides.i2, sides.i3]
    u1 = u[:, sides.i2 + s2, sides.i3 + s3]
    u2 = u[:, sides.i2 + 2 * s2, sides.i3 + 2 * s3]
    # outward derivative = - inward derivative
    out = -(-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * grid.cs.h)
    if A_nu is not None:
        out = out + 1j * A_nu * u0
    return out


def dn_apply(A: MagneticPotential | None, u: FiberField) -> LateralTrace:
    """(d_nu + i A.nu) u on the lateral boundary for every time level."""
    grid = u.grid
    A_nu = None if A is None or A.is_zero else _boundary_potential(A, grid)
    vals = np.stack([dn_apply_level(u.values[n], grid, A_nu) for n in range(grid.n_t + 1)])
    return LateralTrace(grid, vals)


def dn_response(op: FiberOperator, lift, orientation: str = FORWARD) -> LateralTrace:
    """Neumann trace of the solution with Dirichlet data given by ``lift`` (streamed)."""
    grid = op.grid
    A_nu = None if op.A is None or op.A.is_zero else _boundary_potential(op.A, grid)
    vals = np.zeros((grid.n_t + 1, grid.n1, grid.cs.sides.size), dtype=complex)
    for n, u in dirichlet_march(op, lift, orientation):
        vals[n] = dn_apply_level(u, grid, A_nu)
    return LateralTrace(grid, vals)


# ----------------------------------------------------------------------
# pairings
# ----------------------------------------------------------------------
PAIRING_COLUMNS = ("theta", "omega2", "omega3", "xi2", "xi3", "k", "j", "sigma", "re", "im", "path")


@dataclass(frozen=True)
class PairingRecord:
    """Value of <(Lambda_1 - Lambda_2) f_2, f_1> for one probe."""

    theta: float
    omega: tuple[float, float]
    xi: tuple[float, float]
    k: int
    j: int
    sigma: float
    value: complex
    path: str
    window: int = 0

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("pairing value is not finite")
        if self.path not in ("pde", "oracle"):
            raise ValueError("path must be 'pde' or 'oracle'")

    def row(self) -> list[str]:
        v = complex(self.value)
        nums = [self.theta, self.omega[0], self.omega[1], self.xi[0], self.xi[1]]
        return (
            ["%.17g" % x for x in nums]
            + [str(self.k), str(self.j), "%.17g" % self.sigma, "%.17g" % v.real, "%.17g" % v.imag, self.path]
        )


def write_pairings(records: Iterable[PairingRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIRING_COLUMNS)
        for r in records:
            w.writerow(r.row())


def dn_pair(pair: PotentialPair, spec, grid: WaveguideGrid) -> PairingRecord:
    """PDE-path pairing <(Lambda_{A1} - Lambda_{A2}) f_2, f_1> for one probe.

    ``f_2`` is the forward GO datum built with A2 and ``f_1`` the backward
    GO datum built with A1.  Both DN responses to ``f_2`` come from forward
    solves with the same lift, marched side by side so memory stays at a
    few time levels.
    """
    from .probes import check_resolution, go_lift, window_components

    check_resolution(spec.sigma, grid)
    comp = window_components(spec, pair.difference)
    lift2 = go_lift(comp, grid, pair.A2, side=2)
    lift1 = go_lift(comp, grid, pair.A1, side=1)
    if pair.identical:
        return _record(spec, 0j, "pde")
    op1 = assemble_operator(pair.A1, spec.theta, grid)
    op2 = assemble_operator(pair.A2, spec.theta, grid)
    # A1 = A2 on the lateral boundary, so the i A.nu u terms cancel exactly
    w = grid.time_weights
    sw = grid.h1 * grid.cs.sides.weight
    total = 0j
    for (n, v), (_, u2) in zip(dirichlet_march(op1, lift2), dirichlet_march(op2, lift2)):
        if w[n] == 0.0:
            continue
        diff = dn_apply_level(v - u2, grid)
        f1 = lift1.trace(grid.t[n])
        total += w[n] * np.sum(diff * np.conj(f1) * sw)
    return _record(spec, complex(total), "pde")


def _record(spec, value: complex, path: str) -> PairingRecord:
    return PairingRecord(
        theta=float(spec.theta),
        omega=tuple(float(x) for x in spec.omega),
        xi=tuple(float(x) for x in spec.xi),
        k=int(spec.k),
        j=int(spec.j),
        sigma=float(spec.sigma),
        value=complex(value),
        path=path,
        window=int(spec.window),
    )


# ----------------------------------------------------------------------
# norm surrogates
# ----------------------------------------------------------------------
def _d1(u: np.ndarray, theta: float, h1: float):
    """Central x1 derivative with the quasi-periodic wrap (axis 0)."""
    fwd = np.roll(u, -1, axis=0)
    fwd[-1] *= np.exp(1j * theta)
    bwd = np.roll(u, 1, axis=0)
    bwd[0] *= np.exp(-1j * theta)
    return fwd, bwd


def spatial_h2_sq(u: np.ndarray, grid: WaveguideGrid, theta: float) -> float:
    """Squared discrete H^2 norm of one level over nodes where all stencils fit.

    All partial derivatives up to order two with ordered index pairs (the
    Frobenius convention, as for the profile norm); centred differences,
    quasi-periodic in x1.
    """
    h1, h = grid.h1, grid.cs.h
    core = (slice(None), slice(1, -1), slice(1, -1))

    def D(v, axis):
        if axis == 0:
            f, b = _d1(v, theta, h1)
            return (f - b) / (2 * h1)
        out = np.zeros_like(v)
        sl_c = [slice(None)] * 3
        sl_f = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_c[axis] = slice(1, -1)
        sl_f[axis] = slice(2, None)
        sl_b[axis] = slice(0, -2)
        out[tuple(sl_c)] = (v[tuple(sl_f)] - v[tuple(sl_b)]) / (2 * h)
        return out

    def DD(v, axis):
        if axis == 0:
            f, b = _d1(v, theta, h1)
            return (f - 2 * v + b) / h1**2
        out = np.zeros_like(v)
        sl_c = [slice(None)] * 3
        sl_f = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_c[axis] = slice(1, -1)
        sl_f[axis] = slice(2, None)
        sl_b[axis] = slice(0, -2)
        out[tuple(sl_c)] = (v[tuple(sl_f)] - 2 * v[tuple(sl_c)] + v[tuple(sl_b)]) / h**2
        return out

    cell = h1 * h * h
    total = np.sum(np.abs(u[core]) ** 2)
    first = [D(u, a) for a in range(3)]
    for a in range(3):
        total += np.sum(np.abs(first[a][core]) ** 2)
        for b in range(3):
            second = DD(u, a) if a == b else D(first[a], b)
            total += np.sum(np.abs(second[core]) ** 2)
    return float(cell * total)


def xtheta_norm_surrogate(lift, grid: WaveguideGrid, theta: float) -> float:
    """H^2(0, T; H^2) grid norm of a lift, sum over time orders 0, 1, 2.

    Time derivatives are centred differences of the lift samples (one-sided
    three-point at the two ends); the outer integral is the time trapezoid.
    """
    if lift is None:
        return 0.0
    t = grid.t
    dt = grid.dt
    n_t = grid.n_t
    cache: dict[int, np.ndarray] = {}

    def level(n):
        if n not in cache:
            if len(cache) > 4:
                cache.pop(min(cache))
            cache[n] = np.asarray(lift.values(t[n]), dtype=complex)
        return cache[n]

    total = 0.0
    for n in range(n_t + 1):
        w = grid.time_weights[n]
        u = level(n)
        if n_t >= 2:
            if n == 0:
                a, b, c = level(0), level(1), level(2)
                du = (-3 * a + 4 * b - c) / (2 * dt)
                ddu = (a - 2 * b + c) / dt**2
            elif n == n_t:
                a, b, c = level(n_t - 2), level(n_t - 1), level(n_t)
                du = (3 * c - 4 * b + a) / (2 * dt)
                ddu = (a - 2 * b + c) / dt**2
            else:
                a, c = level(n - 1), level(n + 1)
                du = (c - a) / (2 * dt)
                ddu = (c - 2 * u + a) / dt**2
        else:
            du = ddu = np.zeros_like(u)
        if not (np.any(u) or np.any(du) or np.any(ddu)):
            continue
        total += w * (spatial_h2_sq(u, grid, theta) + spatial_h2_sq(du, grid, theta) + spatial_h2_sq(ddu, grid, theta))
    return float(np.sqrt(total))


@dataclass
class NormEstimate:
    value: float
    per_datum: list[float] = field(default_factory=list)


def dn_norm_estimate(
    pair: PotentialPair,
    theta: float,
    battery: Sequence,
    grid: WaveguideGrid,
    surrogate_norms: Sequence[float] | None = None,
) -> NormEstimate:
    """max over the battery of ||(Lambda_1 - Lambda_2) h|| / ||h||_surrogate.

    Each battery entry is a lift (vanishing at t = 0).  Norms of the lifts
    can be supplied to avoid recomputing them across potential pairs.
    """
    if len(battery) == 0:
        raise ValueError("battery must be nonempty")
    if pair.identical:
        return NormEstimate(0.0, [0.0] * len(battery))
    op1 = assemble_operator(pair.A1, theta, grid)
    op2 = assemble_operator(pair.A2, theta, grid)
    w = grid.time_weights[:, None, None] * grid.h1 * grid.cs.sides.weight[None, None, :]
    ratios = []
    for i, lift in enumerate(battery):
        sq = 0.0
        for (n, v), (_, u2) in zip(dirichlet_march(op1, lift), dirichlet_march(op2, lift)):
            d = dn_apply_level(v - u2, grid)
            sq += float(np.sum(np.abs(d) ** 2 * w[n]))
        norm = surrogate_norms[i] if surrogate_norms is not None else xtheta_norm_surrogate(lift, grid, theta)
        ratios.append(np.sqrt(sq) / norm if norm > 0 else 0.0)
    return NormEstimate(float(max(ratios)), [float(r) for r in ratios])


# ----------------------------------------------------------------------
# Green identity
# ----------------------------------------------------------------------
@dataclass
class GreenCheck:
    volume: complex
    boundary: complex

    @property
    def mismatch(self) -> float:
        return abs(self.volume - self.boundary) / max(abs(self.volume), 1e-300)


def green_check(op: FiberOperator, source, lift) -> GreenCheck:
    """Volume pairing of a source against a backward solution vs its boundary pairing.

    ``w`` solves the forward problem with ``source`` and zero data, ``u1``
    the backward problem with zero source and Dirichlet data from ``lift``
    (vanishing at T).  Integrating by parts gives

        int_Q f conj(u1) = int_Sigma (d_nu + i A.nu) w conj(u1).
    """
    grid = op.grid
    w = solve_source(op, source, FORWARD)
    u1 = solve_dirichlet(op, lift, BACKWARD)
    tw = grid.time_weights
    cw = np.asarray(grid.weights)
    vol = 0j
    for n in range(grid.n_t + 1):
        f = np.asarray(source.func(grid.t[n]), dtype=complex)
        vol += tw[n] * np.sum(f * np.conj(u1.values[n]) * cw)
    trace_w = dn_apply(op.A, w)
    sides = grid.cs.sides
    trace_u1 = u1.values[:, :, sides.i2, sides.i3]
    return GreenCheck(complex(vol), trace_w.inner(trace_u1))
