"""X-ray transform, pairing oracle, Fourier extraction and reconstruction.

Fourier conventions: the partial transform in x' is unitary,
``f^(x1, xi') = (2 pi)^{-1} int exp(-i x'.xi') f(x1, x') dx'``, so that the
slice identity reads

    (2 pi)^{-1} int_{omega'^perp} exp(-i x'.xi') (P f)(omega', x1, x') dx' = f^(x1, xi')

for xi' orthogonal to omega'.  The recovered samples are
``b(xi', k) = int_0^1 exp(-2 i k pi x1) beta23^(x1, xi') dx1``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .fields import MagneticPotential, PotentialPair, beta
from .probes import (
    H_SUPPORT,
    ProbeSpec,
    Window,
    _omega_dot,
    _perp,
    _rho,
    line_quad,
    profile_h,
    ray_integral,
)
from .dn import PairingRecord, _record

__all__ = [
    "xray_transform",
    "xray_lines",
    "rho_j",
    "telescope_check",
    "fourier_slice_check",
    "pairing_oracle",
    "pairing_oracle_reduced",
    "PAIRING_FACTOR",
    "choose_j",
    "direction_for",
    "window_sweep",
    "extract_beta_hat",
    "oracle_sample",
    "beta_hat_direct",
    "FourierSampleGrid",
    "oracle_grid",
    "reconstruct_beta23",
    "Reconstruction",
    "bracket",
]

log = logging.getLogger(__name__)

# <(Lambda_1 - Lambda_2) f_2, f_1> tends to PAIRING_FACTOR * I, with I the
# volume integral -(1/4) int exp(-2 i k pi x1) phi0^2 P(rho_j) dx.  The sign
# follows from the Green identity int_Q f conj(u) = + int_Sigma (d_nu + iA.nu) w conj(u).
PAIRING_FACTOR = -2.0


# ----------------------------------------------------------------------
# X-ray transform
# ----------------------------------------------------------------------
def xray_transform(
    f: Callable, omega: Sequence[float], x1: float, xp: Sequence[float], support_radius: float | None = None, tol: float = 1e-10
) -> float:
    """(P f)(omega', x1, x') = int_R f(x1, x' + s omega') ds by adaptive quadrature.

    ``f`` must vanish outside ``B(0, support_radius)`` in x'; when the radius
    is not given it is read from ``f.support_radius`` (expressions and
    potentials carry one).
    """
    if support_radius is None:
        support_radius = getattr(f, "support_radius", None)
        center = getattr(f, "center", (0.0, 0.0))
        if support_radius is None:
            raise ValueError("support radius of f is unknown")
        support_radius = support_radius + float(np.hypot(*center))
    om = np.asarray(omega, float)
    y = np.asarray(xp, float)
    along = float(y @ om)
    across2 = float(y @ y) - along**2
    if across2 >= support_radius**2:
        return 0.0
    half = np.sqrt(support_radius**2 - across2)

    def g(s):
        return float(np.real_if_close(f(x1, y[0] + s * om[0], y[1] + s * om[1])))

    val, _ = integrate.quad(g, -along - half, -along + half, epsabs=tol, epsrel=tol, limit=400)
    return float(val)


def xray_lines(f: Callable, omega, x1, y2, y3, support_radius: float, panels: int = 16) -> np.ndarray:
    """Vectorised X-ray transform over arrays of points (composite Gauss-Legendre)."""
    return ray_integral(f, x1, y2, y3, omega, support_radius, panels=panels)


def rho_j(pair: PotentialPair | MagneticPotential, omega: Sequence[float], j: int) -> Callable:
    """rho_j = omega'. d A'/d x_j for the difference potential (j in {2, 3})."""
    if j not in (2, 3):
        raise ValueError("rho_j is defined for j in {2, 3}")
    A = pair.difference if isinstance(pair, PotentialPair) else pair
    return _rho(A, np.asarray(omega, float), j)


def _difference(pair) -> MagneticPotential:
    return pair.difference if isinstance(pair, PotentialPair) else pair


def telescope_check(pair, omega, sigma: float, T: float, x1: float, xp: Sequence[float], panels: int = 32):
    """Both sides of the telescoping identity along one ray.

    lhs = int_0^T sigma omega'.A'(x1, x' + 2 sigma t omega') b_t dt with
    b_t = exp(-i int_0^{2 sigma t} omega'.A'(x1, x' + s omega') ds), by
    composite Gauss-Legendre in t with the inner phase by the same rule;
    rhs = (i/2)[exp(-i int_0^{2 sigma T} ...) - 1] with the phase by
    adaptive quadrature.
    """
    A = _difference(pair)
    om = np.asarray(omega, float)
    y = np.asarray(xp, float)
    if A.is_zero:
        return 0j, 0j
    f = _omega_dot(A, om)
    Rs = A.support_radius

    def integrand(t):
        s = 2 * sigma * t
        phase = ray_integral(f, x1, y[0], y[1], om, Rs, lo=0.0, hi=s, panels=8)
        return sigma * f(x1, y[0] + s * om[0], y[1] + s * om[1]) * np.exp(-1j * phase)

    # restrict t to the part of the ray inside the support
    along = float(y @ om)
    across2 = float(y @ y) - along**2
    if across2 >= Rs**2:
        return 0j, 0j
    half = np.sqrt(Rs**2 - across2)
    s_lo, s_hi = max(-along - half, 0.0), min(-along + half, 2 * sigma * T)
    if s_hi <= s_lo:
        lhs = 0j
    else:
        lhs = complex(line_quad(lambda t: integrand(t), np.array(s_lo / (2 * sigma)), np.array(s_hi / (2 * sigma)), panels))
    total, _ = integrate.quad(
        lambda s: float(f(x1, y[0] + s * om[0], y[1] + s * om[1])),
        s_lo, max(s_hi, s_lo), epsabs=1e-13, epsrel=1e-13, limit=400,
    )
    rhs = 0.5j * (np.exp(-1j * total) - 1.0)
    return lhs, complex(rhs)


def fourier_slice_check(f: Callable, support_radius: float, omega, eta: float, x1: float, n: int = 256):
    """Both sides of the slice identity for xi' = eta * perp(omega').

    The left side integrates the X-ray transform along omega'^perp, the
    right side is a 2D trapezoid quadrature of f^ on the box
    [-R, R]^2 (spectrally accurate for compactly supported smooth f).
    """
    om = np.asarray(omega, float)
    pp = _perp(om)
    Rs = float(support_radius)
    tau = np.linspace(-Rs, Rs, n + 1)
    P = ray_integral(f, x1, tau * pp[0], tau * pp[1], om, Rs, panels=16)
    w = np.full(n + 1, tau[1] - tau[0])
    w[[0, -1]] *= 0.5
    lhs = np.sum(np.exp(-1j * eta * tau) * P * w) / (2 * np.pi)
    x = np.linspace(-Rs, Rs, n + 1)
    X2, X3 = np.meshgrid(x, x, indexing="ij")
    xi = eta * pp
    F = f(x1, X2, X3) * np.exp(-1j * (X2 * xi[0] + X3 * xi[1]))
    rhs = np.sum(F * np.outer(w, w)) / (2 * np.pi)
    return complex(lhs), complex(rhs)


# ----------------------------------------------------------------------
# pairing oracle
# ----------------------------------------------------------------------
def _slice_rays(A: MagneticPotential, omega, j: int, x1: np.ndarray, tau: np.ndarray, panels: int = 16):
    """(P omega'.A', P rho_j) on the lines through tau * perp, shape (n1, n_tau)."""
    om = np.asarray(omega, float)
    pp = _perp(om)
    X1, Tau = np.meshgrid(x1, tau, indexing="ij")
    Y2, Y3 = Tau * pp[0], Tau * pp[1]
    if A.is_zero:
        z = np.zeros(X1.shape)
        return z, z
    P = ray_integral(_omega_dot(A, om), X1, Y2, Y3, om, A.support_radius, panels=panels)
    Pr = ray_integral(_rho(A, om, j), X1, Y2, Y3, om, A.support_radius, panels=panels)
    return P, Pr


def _periodic_nodes(n: int) -> tuple[np.ndarray, float]:
    return np.arange(n) / n, 1.0 / n


def _trap(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.linspace(a, b, n + 1)
    w = np.full(n + 1, (b - a) / n)
    w[[0, -1]] *= 0.5
    return x, w


def pairing_oracle(spec: ProbeSpec, pair, n1: int = 32, n_s: int = 128, n_tau: int = 128) -> PairingRecord:
    """Limit of the GO pairing for one probe, by tensor quadrature over the probe support.

    Evaluates PAIRING_FACTOR times

        -(1/4) int_0^1 int exp(-2 i k pi x1) exp(-2 i theta x1) phi^2 P(rho_j) exp(-i P) dx,

    phi = phi_theta phi0, on the box spanned by the profile support.  The
    factor exp(-2 i theta x1) undoes the quasi-periodic weight carried by
    phi^2.
    """
    A = _difference(pair)
    om = np.asarray(spec.omega, float)
    pp = _perp(om)
    x1, w1 = _periodic_nodes(n1)
    tau, wt = _trap(spec.z0_coord - spec.partition.radius, spec.z0_coord + spec.partition.radius, n_tau)
    s, ws = _trap(-spec.r, -spec.r + H_SUPPORT, n_s)
    P, Pr = _slice_rays(A, om, spec.j, x1, tau)
    hv, _ = profile_h(s + spec.r)
    q, _ = spec.partition.sqrt_beta0(spec.window, tau)
    xi = np.asarray(spec.xi, float)
    S, Tau = np.meshgrid(s, tau, indexing="ij")
    Y2, Y3 = S * om[0] + Tau * pp[0], S * om[1] + Tau * pp[1]
    phi0 = (hv[:, None] * q[None, :]) * np.exp(-0.5j * (Y2 * xi[0] + Y3 * xi[1]))
    phi_theta = np.exp(1j * spec.theta * x1)[:, None] * np.exp(0.5j * P)  # (n1, n_tau)
    phi_sq = (phi_theta**2)[:, None, :] * (phi0**2)[None, :, :]
    integrand = (
        np.exp(-2j * np.pi * spec.k * x1 - 2j * spec.theta * x1)[:, None, None]
        * phi_sq
        * (Pr * np.exp(-1j * P))[:, None, :]
    )
    I = -0.25 * np.einsum("asb,a,s,b->", integrand, np.full(n1, w1), ws, wt)
    return _record(spec, PAIRING_FACTOR * I, "oracle")


def pairing_oracle_reduced(spec: ProbeSpec, pair, n1: int = 32, n_tau: int = 128) -> complex:
    """The same limit after integrating h^2 along the rays:

    -(1/4) int_0^1 exp(-2 i k pi x1) int exp(-i x'.xi') beta0(x') P(rho_j)(x1, x') dx' dx1
    over x' in omega'^perp, returned without PAIRING_FACTOR.
    """
    A = _difference(pair)
    x1, w1 = _periodic_nodes(n1)
    tau, wt = _trap(spec.z0_coord - spec.partition.radius, spec.z0_coord + spec.partition.radius, n_tau)
    _, Pr = _slice_rays(A, spec.omega, spec.j, x1, tau)
    b0 = spec.partition.beta0(spec.window, tau)
    inner = (Pr * (np.exp(-1j * spec.eta * tau) * b0 * wt)[None, :]).sum(axis=1)
    return complex(-0.25 * np.sum(np.exp(-2j * np.pi * spec.k * x1) * inner) * w1)


# ----------------------------------------------------------------------
# extraction
# ----------------------------------------------------------------------
def bracket(xi2, xi3, k):
    """<(k, xi')> = (1 + k^2 + |xi'|^2)^{1/2}."""
    return np.sqrt(1.0 + np.asarray(k, float) ** 2 + np.asarray(xi2, float) ** 2 + np.asarray(xi3, float) ** 2)


def direction_for(xi: Sequence[float]) -> tuple[float, float]:
    """A unit omega' orthogonal to xi' (omega' = (1, 0) rotated when xi' = 0)."""
    xi = np.asarray(xi, float)
    n = np.hypot(*xi)
    if n == 0:
        return (1.0, 0.0)
    return (float(xi[1] / n), float(-xi[0] / n))


def choose_j(omega) -> tuple[int, float]:
    """Derivative index and slice divisor: rho2^ = -omega3 b^, rho3^ = omega2 b^."""
    om = np.asarray(omega, float)
    cands = [(2, -om[1]), (3, om[0])]
    j, d = max(cands, key=lambda c: abs(c[1]))
    if abs(d) < 2**-0.5 - 1e-12:
        raise RuntimeError("slice divisor below 1/sqrt(2)")
    return j, float(d)


def window_sweep(support_radius: float, partition: Window | None = None) -> list[int]:
    """Window indices whose bumps meet the support of the slice data."""
    part = partition or Window()
    return part.covering(support_radius)


def partition_defect(support_radius: float, partition: Window | None = None, n: int = 2001) -> float:
    """max |sum_m beta0_m - 1| on [-R, R] over the sweep."""
    part = partition or Window()
    tau = np.linspace(-support_radius, support_radius, n)
    total = sum(part.beta0(m, tau) for m in window_sweep(support_radius, part))
    return float(np.abs(total - 1.0).max())


def extract_beta_hat(records: Sequence[PairingRecord]) -> complex:
    """Combine a full window sweep of pairings into b(xi', k).

    Each record holds PAIRING_FACTOR * I_m; the windows sum to
    -(pi/2) int exp(-2 i k pi x1) rho_j^(x1, xi') dx1, and the slice
    relation divides out the omega' component.
    """
    if not records:
        raise ValueError("no records")
    r0 = records[0]
    for r in records:
        if (r.omega, r.xi, r.k, r.j) != (r0.omega, r0.xi, r0.k, r0.j):
            raise ValueError("records do not share one (omega', xi', k, j)")
    total_I = sum(r.value for r in records) / PAIRING_FACTOR
    rho_hat = total_I / (-np.pi / 2)
    divisor = -r0.omega[1] if r0.j == 2 else r0.omega[0]
    return complex(rho_hat / divisor)


def oracle_sample(pair, xi: Sequence[float], k: int, partition: Window | None = None, n1: int = 32, n_tau: int = 160) -> complex:
    """b(xi', k) from the oracle limit of the window sweep (reduced form)."""
    A = _difference(pair)
    part = partition or Window()
    om = direction_for(xi)
    j, divisor = choose_j(om)
    pp = _perp(om)
    eta = float(np.dot(xi, pp))
    Rs = A.support_radius
    x1, w1 = _periodic_nodes(n1)
    tau, wt = _trap(-Rs - part.radius, Rs + part.radius, n_tau)
    _, Pr = _slice_rays(A, om, j, x1, tau)
    windows = window_sweep(Rs, part)
    beta_sum = sum(part.beta0(m, tau) for m in windows)
    inner = (Pr * (np.exp(-1j * eta * tau) * beta_sum * wt)[None, :]).sum(axis=1)
    I = -0.25 * np.sum(np.exp(-2j * np.pi * k * x1) * inner) * w1
    return complex(I / (-np.pi / 2) / divisor)


def beta_hat_direct(A: MagneticPotential, xi2, xi3, k, n1: int = 32, n: int = 160) -> np.ndarray:
    """int_0^1 exp(-2 i k pi x1) beta23^(x1, xi') dx1 by tensor trapezoid quadrature."""
    Rs = A.support_radius
    x1, w1 = _periodic_nodes(n1)
    x, w = _trap(-Rs, Rs, n)
    X1, X2, X3 = np.meshgrid(x1, x, x, indexing="ij")
    B = beta(A, 2, 3)(X1, X2, X3) * w1 * w[None, :, None] * w[None, None, :]
    xi2 = np.atleast_1d(np.asarray(xi2, float))
    xi3 = np.atleast_1d(np.asarray(xi3, float))
    kk = np.atleast_1d(np.asarray(k, float))
    e1 = np.exp(-2j * np.pi * kk[:, None] * x1[None, :])  # (P, n1)
    e2 = np.exp(-1j * xi2[:, None] * x[None, :])
    e3 = np.exp(-1j * xi3[:, None] * x[None, :])
    out = np.einsum("pa,pb,pc,abc->p", e1, e2, e3, B) / (2 * np.pi)
    return out


# ----------------------------------------------------------------------
# sample grids and reconstruction
# ----------------------------------------------------------------------
SAMPLE_COLUMNS = ("xi2", "xi3", "k", "re", "im", "path", "probe_id")


@dataclass
class FourierSampleGrid:
    """Samples b(xi', k) on the lattice (p, q) * dxi, |k| <= K.

    ``values[i]`` belongs to ``(xi2[i], xi3[i], k[i])``.
    """

    support_radius: float
    xi2: np.ndarray
    xi3: np.ndarray
    k: np.ndarray
    values: np.ndarray
    path: str = "oracle"
    probe_ids: list[str] = field(default_factory=list)

    @property
    def spacing(self) -> float:
        return np.pi / self.support_radius

    @property
    def cell(self) -> float:
        return self.spacing**2

    def parseval_sum(self, mask=None) -> float:
        v = self.values if mask is None else self.values[mask]
        return float(np.sum(np.abs(v) ** 2) * self.cell)

    def hermitian_defect(self) -> float:
        """max |b(-xi', -k) - conj b(xi', k)| over pairs present in the grid."""
        key = {(round(a / self.spacing), round(b / self.spacing), int(c)): v for a, b, c, v in zip(self.xi2, self.xi3, self.k, self.values)}
        worst = 0.0
        for (p, q, c), v in key.items():
            w = key.get((-p, -q, -c))
            if w is not None:
                worst = max(worst, abs(w - np.conj(v)))
        return worst

    def write_csv(self, path) -> None:
        ids = self.probe_ids or [""] * self.values.size
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(SAMPLE_COLUMNS)
            for a, b, c, v, pid in zip(self.xi2, self.xi3, self.k, self.values, ids):
                wr.writerow(["%.17g" % a, "%.17g" % b, str(int(c)), "%.17g" % v.real, "%.17g" % v.imag, self.path, pid])


def lattice(support_radius: float, xi_max: float, K: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lattice points with |xi'| <= xi_max and |k| <= K, in a fixed order."""
    d = np.pi / support_radius
    m = int(np.floor(xi_max / d))
    pts = [
        (p * d, q * d, k)
        for k in range(-K, K + 1)
        for p in range(-m, m + 1)
        for q in range(-m, m + 1)
        if (p * p + q * q) * d * d <= xi_max**2 + 1e-9
    ]
    a = np.array(pts, dtype=float).reshape(-1, 3)
    return a[:, 0], a[:, 1], a[:, 2].astype(int)


def oracle_grid(pair, xi_max: float, K: int, partition: Window | None = None, workers: int = 1, **kw) -> FourierSampleGrid:
    """Oracle-path samples on the lattice; samples at -xi' reuse the Hermitian partner."""
    A = _difference(pair)
    Rs = A.support_radius
    xi2, xi3, k = lattice(Rs, xi_max, K)
    values = np.zeros(xi2.size, dtype=complex)
    index = {(round(a / (np.pi / Rs)), round(b / (np.pi / Rs)), int(c)): i for i, (a, b, c) in enumerate(zip(xi2, xi3, k))}
    todo = []
    for key, i in index.items():
        partner = (-key[0], -key[1], -key[2])
        if partner in index and index[partner] < i:
            continue
        todo.append(i)
    if A.is_zero:
        results = [0j] * len(todo)
    elif workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_oracle_task, [(A, (xi2[i], xi3[i]), int(k[i]), partition, kw) for i in todo]))
    else:
        results = [_oracle_task((A, (xi2[i], xi3[i]), int(k[i]), partition, kw)) for i in todo]
    for i, v in zip(todo, results):
        values[i] = v
    for key, i in index.items():
        partner = (-key[0], -key[1], -key[2])
        j = index.get(partner)
        if j is not None and j < i:
            values[i] = np.conj(values[j])
    ids = [f"oracle:{a:.6g},{b:.6g},{c}" for a, b, c in zip(xi2, xi3, k)]
    return FourierSampleGrid(Rs, xi2, xi3, k, values, "oracle", ids)


def _oracle_task(args):
    A, xi, k, partition, kw = args
    return oracle_sample(A, xi, k, partition, **kw)


@dataclass
class Reconstruction:
    field: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    retained: int
    parseval_norm: float
    gamma: float
    warning: str | None = None


def reconstruct_beta23(
    grid: FourierSampleGrid, gamma: float, x1: np.ndarray, x2: np.ndarray, x3: np.ndarray
) -> Reconstruction:
    """Lattice synthesis of beta23 from the samples with <(xi', k)> <= gamma.

    beta23(x1, x') = sum_k exp(2 i k pi x1) (2 pi)^{-1} sum_xi' exp(i x'.xi') b(xi', k) dxi^2.
    The reported norm is the Parseval sum over the retained samples.
    """
    keep = bracket(grid.xi2, grid.xi3, grid.k) <= gamma
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    x3 = np.asarray(x3, float)
    out = np.zeros((x1.size, x2.size, x3.size), dtype=complex)
    if not np.any(keep):
        log.warning("no lattice samples inside the cutoff gamma = %g; returning the zero field", gamma)
        return Reconstruction(out.real, x1, x2, x3, 0, 0.0, gamma, "empty retained set")
    v = grid.values[keep] * grid.cell / (2 * np.pi)
    e1 = np.exp(2j * np.pi * np.outer(grid.k[keep], x1))
    e2 = np.exp(1j * np.outer(grid.xi2[keep], x2))
    e3 = np.exp(1j * np.outer(grid.xi3[keep], x3))
    out = np.einsum("p,pa,pb,pc->abc", v, e1, e2, e3)
    return Reconstruction(out.real, x1, x2, x3, int(keep.sum()), float(np.sqrt(grid.parseval_sum(keep))), gamma)
