"""Partial Floquet-Bloch-Gelfand transform along the waveguide axis.

A function on the cylinder that lives in finitely many unit cells
``k_min <= k <= k_max`` is stored cell by cell.  Its fiber at quasi-momentum
theta is

    f_theta(x1, y) = sum_k exp(-i k theta) f(x1 + k, y),

a theta-quasi-periodic function on one cell.  On a uniform theta grid of
``n_theta`` nodes the transform is a length-``n_theta`` DFT in the cell
index, so the inversion and Parseval identities are exact once
``n_theta`` exceeds the cell span.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CellFunction",
    "FiberDatum",
    "FBGError",
    "theta_grid",
    "fbg_forward",
    "fbg_fibers",
    "fbg_inverse",
    "fbg_inverse_all",
    "parseval_defect",
]


class FBGError(ValueError):
    """The theta grid cannot resolve the requested cells."""


@dataclass(frozen=True)
class CellFunction:
    """Samples ``cells[k - k_min]`` of f(x1 + k, y) for x1 in [0, 1).

    Each cell array has shape (n1, ...) with the cross-section axes after
    the first.  ``cell_measure`` is the quadrature weight of one sample
    (scalar or broadcastable array) used for L^2 norms.
    """

    k_min: int
    cells: np.ndarray
    cell_measure: float | np.ndarray = 1.0

    def __post_init__(self):
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=complex))
        if self.cells.ndim < 2:
            raise ValueError("cells must have shape (n_cells, n1, ...)")

    @property
    def k_max(self) -> int:
        return self.k_min + self.cells.shape[0] - 1

    @property
    def span(self) -> int:
        return self.cells.shape[0]

    @property
    def ks(self) -> np.ndarray:
        return np.arange(self.k_min, self.k_max + 1)

    def cell(self, k: int) -> np.ndarray:
        if not self.k_min <= k <= self.k_max:
            return np.zeros(self.cells.shape[1:], dtype=complex)
        return self.cells[k - self.k_min]

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.cells) ** 2 * self.cell_measure)))


@dataclass(frozen=True)
class FiberDatum:
    theta: float
    values: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.theta < 2 * np.pi:
            raise ValueError(f"theta = {self.theta} outside [0, 2 pi)")


def theta_grid(n_theta: int) -> np.ndarray:
    """Uniform nodes 2 pi m / n_theta, m = 0 .. n_theta - 1."""
    if n_theta < 1:
        raise ValueError("n_theta must be positive")
    return 2 * np.pi * np.arange(n_theta) / n_theta


def fbg_forward(f: CellFunction, theta: float) -> FiberDatum:
    phases = np.exp(-1j * f.ks * theta)
    return FiberDatum(float(theta), np.tensordot(phases, f.cells, axes=1))


def fbg_fibers(f: CellFunction, n_theta: int = 16) -> list[FiberDatum]:
    return [fbg_forward(f, th) for th in theta_grid(n_theta)]


def _check(fibers: list[FiberDatum]) -> np.ndarray:
    n = len(fibers)
    if n == 0:
        raise FBGError("no fibers given")
    thetas = np.array([fb.theta for fb in fibers])
    if not np.allclose(thetas, theta_grid(n), atol=1e-12):
        raise FBGError("fibers must sit on the uniform grid 2 pi m / n_theta")
    return thetas


def fbg_inverse(fibers: list[FiberDatum], k: int, span: tuple[int, int] | None = None) -> np.ndarray:
    """Cell ``k`` of the function whose fibers are given.

    The theta trapezoid sum aliases cells k and k + n_theta; ``span``, the
    declared (k_min, k_max) of the original function, is checked against
    ``n_theta`` so aliasing cannot occur.
    """
    thetas = _check(fibers)
    n = thetas.size
    if span is not None:
        lo, hi = span
        if hi - lo + 1 > n:
            raise FBGError(f"n_theta = {n} is too coarse for a cell span of {hi - lo + 1}")
    stack = np.stack([fb.values for fb in fibers])
    return np.tensordot(np.exp(1j * k * thetas), stack, axes=1) / n


def fbg_inverse_all(fibers: list[FiberDatum], k_min: int, k_max: int, cell_measure=1.0) -> CellFunction:
    cells = np.stack([fbg_inverse(fibers, k, (k_min, k_max)) for k in range(k_min, k_max + 1)])
    return CellFunction(k_min, cells, cell_measure)


def parseval_defect(f: CellFunction, n_theta: int = 64) -> float:
    """| (1/2pi) int ||f_theta||^2 d theta - ||f||^2 | / ||f||^2, trapezoid in theta."""
    fibers = fbg_fibers(f, n_theta)
    mean = np.mean([np.sum(np.abs(fb.values) ** 2 * f.cell_measure) for fb in fibers])
    ref = f.norm() ** 2
    return float(abs(mean - ref) / ref) if ref > 0 else float(abs(mean))
