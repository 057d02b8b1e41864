"""Geometric-optics probes.

A probe is built from a profile ``phi0`` supported in the annulus
``B(0, R+1) minus B(0, R)`` of the cross-section plane, a fiber factor
``phi_theta`` and the magnetic amplitude ``b``.  Its main part

    Phi(2 sigma t, x) b(2 sigma t, x) exp(i sigma (x'.omega - sigma t))

travels across the waveguide with speed ``2 sigma``.  Because ``phi0`` sits
on the incoming side of the annulus, every backward ray from the support of
``Phi`` misses the support of ``A'``; the amplitude then reduces to the
static factor ``exp(-i H(x))`` with ``H`` the half-line integral of
``omega'.A'``, and ``phi_theta`` evaluated at the transported point equals
its value at ``x``.  Lifts on a grid are therefore products of static arrays
with a translated copy of ``phi0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .domain import WaveguideGrid
from .fields import MagneticPotential, ZERO_POTENTIAL, standard_bump, _bump_of_s
from .pde import FORWARD, BACKWARD, FiberField, assemble_operator, lift_residual, march

__all__ = [
    "ProbeError",
    "ResolutionError",
    "ProbeSpec",
    "Window",
    "GOComponents",
    "GOLift",
    "BroadProbe",
    "ray_integral",
    "line_quad",
    "build_amplitude",
    "profile_h",
    "window_components",
    "n_omega_norm",
    "go_boundary_data",
    "go_lift",
    "go_remainder",
    "RemainderResult",
    "check_resolution",
]


class ProbeError(ValueError):
    """A probe specification violates one of its geometric invariants."""


class ResolutionError(ValueError):
    """The grid cannot resolve the probe phase."""


# ----------------------------------------------------------------------
# ray quadrature
# ----------------------------------------------------------------------
_PANEL_NODES, _PANEL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _perp(omega) -> np.ndarray:
    return np.array([-omega[1], omega[0]], dtype=float)


def line_quad(fn: Callable, lo: np.ndarray, hi: np.ndarray, panels: int = 8) -> np.ndarray:
    """Composite Gauss-Legendre integral of ``fn(s)`` over ``[lo, hi]`` (arrays).

    ``fn`` receives an array of parameters with a trailing quadrature axis.
    Empty intervals (``hi <= lo``) give zero.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    length = np.maximum(hi - lo, 0.0)
    edges = np.linspace(0.0, 1.0, panels + 1)
    t = (0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * (edges[1:, None] - edges[:-1, None]) * _PANEL_NODES).ravel()
    w = (0.5 * (edges[1:, None] - edges[:-1, None]) * _PANEL_WEIGHTS).ravel()
    s = lo[..., None] + length[..., None] * t
    vals = fn(s)
    return np.sum(vals * w, axis=-1) * length


def _chord(y2, y3, omega, radius):
    """Parameter interval where y + s omega lies in the disk B(0, radius)."""
    along = y2 * omega[0] + y3 * omega[1]
    across2 = y2 * y2 + y3 * y3 - along * along
    half = np.sqrt(np.maximum(radius * radius - across2, 0.0))
    hit = across2 < radius * radius
    return -along - half, -along + half, hit


def ray_integral(
    fn: Callable,
    x1,
    y2,
    y3,
    omega: Sequence[float],
    support_radius: float,
    lo=-np.inf,
    hi=np.inf,
    panels: int = 8,
) -> np.ndarray:
    """Integral of ``fn(x1, y' + s omega)`` for s in [lo, hi], clipped to the support disk."""
    x1, y2, y3, lo, hi = np.broadcast_arrays(
        np.asarray(x1, float), np.asarray(y2, float), np.asarray(y3, float),
        np.asarray(lo, float), np.asarray(hi, float),
    )
    a, b, hit = _chord(y2, y3, omega, support_radius)
    a = np.maximum(a, lo)
    b = np.minimum(b, hi)
    a = np.where(hit, a, 0.0)
    b = np.where(hit, b, 0.0)
    om = np.asarray(omega, dtype=float)
    shape = x1.shape
    x1, y2, y3, a, b = (np.ravel(v) for v in (x1, y2, y3, a, b))
    out = np.zeros(x1.size)
    live = np.nonzero(b > a)[0]
    # chunk so that points x quadrature nodes stay a few million entries
    chunk = max(1, 2**21 // (panels * _PANEL_NODES.size))
    for start in range(0, live.size, chunk):
        idx = live[start : start + chunk]
        p1, p2, p3 = x1[idx, None], y2[idx, None], y3[idx, None]

        def integrand(s):
            return fn(p1, p2 + s * om[0], p3 + s * om[1])

        out[idx] = line_quad(integrand, a[idx], b[idx], panels)
    return out.reshape(shape)


def _omega_dot(A: MagneticPotential, omega) -> Callable:
    def f(x1, x2, x3):
        return omega[0] * A.a2(x1, x2, x3) + omega[1] * A.a3(x1, x2, x3)

    return f


def _rho(A: MagneticPotential, omega, j: int) -> Callable:
    """omega'. d A'/d x_j for j in {2, 3}."""

    def f(x1, x2, x3):
        g2 = A.a2.grad(x1, x2, x3)[j - 1]
        g3 = A.a3.grad(x1, x2, x3)[j - 1]
        return omega[0] * g2 + omega[1] * g3

    return f


def build_amplitude(A: MagneticPotential, omega: Sequence[float], panels: int = 8) -> Callable:
    """b(t, x) = exp(-i int_0^t omega'.A'(x1, x' - s omega') ds), by ray quadrature.

    ``A`` must already be the potential extended by zero (presets are
    compactly supported inside the cross-section, so the expression itself
    serves).
    """
    om = np.asarray(omega, dtype=float)
    if A.is_zero:
        return lambda t, x1, x2, x3: np.ones(np.broadcast(t, x1, x2, x3).shape, dtype=complex)
    f = _omega_dot(A, om)

    def b(t, x1, x2, x3):
        t = np.asarray(t, float)
        phase = ray_integral(f, x1, x2, x3, om, A.support_radius, lo=-t, hi=0.0, panels=panels)
        return np.exp(-1j * phase)

    return b


# ----------------------------------------------------------------------
# probe specification
# ----------------------------------------------------------------------
H_SUPPORT = 1.0 / 8.0
WINDOW_RADIUS = 1.0 / 8.0


@dataclass(frozen=True)
class Window:
    """Translated-bump partition of unity on the line omega'^perp.

    Window m is centred at ``offset + m * spacing`` and
    ``beta0_m = chi_m / sum_n chi_n`` with chi the standard bump of radius
    ``radius``; the sum runs over all integers n, so the family sums to one
    on the whole line.
    """

    spacing: float = 1.0 / 8.0
    radius: float = WINDOW_RADIUS
    offset: float = 0.0

    def center(self, m: int) -> float:
        return self.offset + m * self.spacing

    def _neighbours(self, tau: np.ndarray) -> np.ndarray:
        reach = int(np.ceil(self.radius / self.spacing)) + 1
        base = np.floor((tau - self.offset) / self.spacing).astype(int)
        return base[..., None] + np.arange(-reach, reach + 2)

    def _denominator(self, tau, order=1):
        tau = np.asarray(tau, float)
        ms = self._neighbours(tau)
        d = (tau[..., None] - (self.offset + ms * self.spacing)) / self.radius
        v, d1, _ = _bump_of_s(d * d, 1)
        S = v.sum(-1)
        dS = (d1 * 2 * d / self.radius).sum(-1)
        return S, dS

    def sqrt_beta0(self, m: int, tau) -> tuple[np.ndarray, np.ndarray]:
        """sqrt(beta0_m)(tau) and its tau-derivative."""
        tau = np.asarray(tau, float)
        d = (tau - self.center(m)) / self.radius
        s = d * d
        inside = s < 1.0
        S, dS = self._denominator(tau)
        root = np.zeros_like(tau)
        droot = np.zeros_like(tau)
        u = 1.0 / (1.0 - s[inside])
        # sqrt(chi) = exp((1 - u) / 2)
        sq = np.exp(0.5 * (1.0 - u))
        dsq = sq * (-0.5 * u * u) * 2 * d[inside] / self.radius
        root[inside] = sq / np.sqrt(S[inside])
        droot[inside] = dsq / np.sqrt(S[inside]) - 0.5 * sq * dS[inside] / S[inside] ** 1.5
        return root, droot

    def beta0(self, m: int, tau) -> np.ndarray:
        return self.sqrt_beta0(m, tau)[0] ** 2

    def covering(self, half_length: float) -> list[int]:
        """Indices of windows meeting [-half_length, half_length]."""
        lo = int(np.floor((-half_length - self.radius - self.offset) / self.spacing))
        hi = int(np.ceil((half_length + self.radius - self.offset) / self.spacing))
        return [m for m in range(lo, hi + 1) if abs(self.center(m)) - self.radius < half_length]


@dataclass(frozen=True)
class ProbeSpec:
    """Parameters of one probe of the recovery family.

    ``z0`` is the window centre, a point of omega'^perp given by its
    coordinate along ``perp = (-omega3, omega2)``.  ``window`` indexes the
    partition of unity used for ``beta0``.
    """

    omega: tuple[float, float]
    sigma: float
    theta: float
    T: float
    R: float
    xi: tuple[float, float] = (0.0, 0.0)
    k: int = 0
    j: int = 2
    window: int = 0
    partition: Window = field(default_factory=Window)

    def __post_init__(self):
        om = np.asarray(self.omega, float)
        if abs(np.hypot(*om) - 1.0) > 1e-12:
            raise ProbeError("omega' must be a unit vector")
        if self.j not in (2, 3):
            raise ProbeError("derivative index j must be 2 or 3")
        if abs(float(np.dot(om, self.xi))) > 1e-14 * max(1.0, np.hypot(*self.xi)):
            raise ProbeError("xi' must be orthogonal to omega'")
        if not self.sigma > self.sigma0:
            raise ProbeError(f"sigma = {self.sigma} must exceed sigma0 = 2(R+1)/T = {self.sigma0:.6g}")
        if not self.sigma > (2 * self.R + 1) / self.T:
            raise ProbeError("sigma violates the support clearance (2R+1)/T")
        if not abs(self.z0_coord) < self.R + 0.5:
            raise ProbeError("window centre z0' must lie in B(0, R + 1/2)")
        z1 = self.z1
        r1 = np.hypot(*z1)
        # open ball in the open annulus: tangency to the outer circle is allowed
        eps = 1e-12
        if not (r1 - 0.25 >= self.R - eps and r1 + 0.25 <= self.R + 1 + eps and float(np.dot(z1, om)) + 0.25 <= eps):
            raise ProbeError("B(z1', 1/4) is not contained in the incoming half annulus")

    @property
    def sigma0(self) -> float:
        return 2 * (self.R + 1) / self.T

    @property
    def perp(self) -> np.ndarray:
        return _perp(self.omega)

    @property
    def z0_coord(self) -> float:
        return self.partition.center(self.window)

    @property
    def z0(self) -> np.ndarray:
        return self.z0_coord * self.perp

    @property
    def r(self) -> float:
        """r_{z0'} = sqrt((R + 3/4)^2 - |z0'|^2)."""
        return float(np.sqrt((self.R + 0.75) ** 2 - self.z0_coord**2))

    @property
    def z1(self) -> np.ndarray:
        return self.z0 - self.r * np.asarray(self.omega, float)

    @property
    def eta(self) -> float:
        """xi' = eta * perp."""
        return float(np.dot(self.xi, self.perp))

    def with_sigma(self, sigma: float) -> "ProbeSpec":
        return replace(self, sigma=sigma)


@dataclass(frozen=True)
class BroadProbe:
    """Round bump profile of radius ``radius`` centred at -(R + 1/2) omega'.

    Used for the remainder-decay study where only the free transport part of
    the construction matters.
    """

    omega: tuple[float, float]
    sigma: float
    theta: float
    T: float
    R: float
    radius: float = 0.5

    def __post_init__(self):
        if abs(np.hypot(*self.omega) - 1.0) > 1e-12:
            raise ProbeError("omega' must be a unit vector")
        if not 0 < self.radius <= 0.5:
            raise ProbeError("profile radius must lie in (0, 1/2]")
        if not self.sigma > 2 * (self.R + 1) / self.T:
            raise ProbeError("sigma must exceed 2(R+1)/T")

    @property
    def center(self) -> np.ndarray:
        return -(self.R + 0.5) * np.asarray(self.omega, float)

    def with_sigma(self, sigma: float) -> "BroadProbe":
        return replace(self, sigma=sigma)


# ----------------------------------------------------------------------
# profiles
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class _HProfile:
    """Standard bump on (0, 1/8), normalised in L^2."""

    width: float = H_SUPPORT

    @cached_property
    def scale(self) -> float:
        half = self.width / 2
        val, _ = integrate.quad(lambda r: standard_bump(np.array(r)) ** 2, -1, 1, epsabs=1e-13, epsrel=1e-13, limit=200)
        return 1.0 / np.sqrt(half * val)

    def __call__(self, s) -> tuple[np.ndarray, np.ndarray]:
        half = self.width / 2
        d = (np.asarray(s, float) - half) / half
        v, d1, _ = _bump_of_s(d * d, 1)
        return self.scale * v, self.scale * d1 * 2 * d / half


profile_h = _HProfile()


class Profile:
    """Compactly supported cross-section profile with its gradient.

    ``__call__(y2, y3)`` returns ``(value, d/dy2, d/dy3)``.
    """

    support_center: np.ndarray
    support_radius: float

    def __call__(self, y2, y3):
        raise NotImplementedError


class WindowProfile(Profile):
    """phi0(y') = h(y'.omega + r) exp(-i y'.xi / 2) sqrt(beta0)(y'.perp)."""

    def __init__(self, spec: ProbeSpec):
        self.spec = spec
        self.om = np.asarray(spec.omega, float)
        self.pp = spec.perp
        self.xi = np.asarray(spec.xi, float)
        self.support_center = spec.z1
        self.support_radius = 0.25

    def __call__(self, y2, y3):
        s = y2 * self.om[0] + y3 * self.om[1]
        tau = y2 * self.pp[0] + y3 * self.pp[1]
        hv, hd = profile_h(s + self.spec.r)
        q, dq = self.spec.partition.sqrt_beta0(self.spec.window, tau)
        ph = np.exp(-0.5j * (y2 * self.xi[0] + y3 * self.xi[1]))
        v = hv * q * ph
        ds = hd * q * ph
        dt = hv * dq * ph
        dxi = -0.5j * v
        g2 = ds * self.om[0] + dt * self.pp[0] + dxi * self.xi[0]
        g3 = ds * self.om[1] + dt * self.pp[1] + dxi * self.xi[1]
        return v, g2, g3


class RoundProfile(Profile):
    def __init__(self, center, radius):
        self.support_center = np.asarray(center, float)
        self.support_radius = float(radius)

    def __call__(self, y2, y3):
        d2 = y2 - self.support_center[0]
        d3 = y3 - self.support_center[1]
        r2 = self.support_radius**2
        v, d1, _ = _bump_of_s((d2 * d2 + d3 * d3) / r2, 1)
        return v.astype(complex), d1 * 2 * d2 / r2, d1 * 2 * d3 / r2


# ----------------------------------------------------------------------
# components and lifts
# ----------------------------------------------------------------------
@dataclass
class GOComponents:
    """Evaluators of the construction for one probe.

    ``P`` and ``P_rho`` are full-line ray integrals of omega'.A' and of
    rho_j for the difference potential; ``phi`` is the product
    ``phi_theta * phi0`` with ``phi_theta = exp(i theta x1) exp(i P / 2)``.
    """

    spec: object
    potential: MagneticPotential
    profile: Profile

    @property
    def omega(self) -> np.ndarray:
        return np.asarray(self.spec.omega, float)

    def P(self, x1, x2, x3):
        A = self.potential
        if A.is_zero:
            return np.zeros(np.broadcast(x1, x2, x3).shape)
        return ray_integral(_omega_dot(A, self.omega), x1, x2, x3, self.omega, A.support_radius)

    def P_rho(self, x1, x2, x3):
        A = self.potential
        j = getattr(self.spec, "j", 2)
        if A.is_zero:
            return np.zeros(np.broadcast(x1, x2, x3).shape)
        return ray_integral(_rho(A, self.omega, j), x1, x2, x3, self.omega, A.support_radius)

    def phi_theta(self, x1, x2, x3):
        return np.exp(1j * self.spec.theta * np.asarray(x1) + 0.5j * self.P(x1, x2, x3))

    def phi0(self, y2, y3):
        return self.profile(np.asarray(y2, float), np.asarray(y3, float))[0]

    def phi(self, x1, x2, x3):
        return self.phi_theta(x1, x2, x3) * self.phi0(x2, x3)

    def Phi(self, t, x1, x2, x3):
        """phi(x1, x' - t omega')."""
        om = self.omega
        t = np.asarray(t, float)
        return self.phi(x1, x2 - t * om[0], x3 - t * om[1])

    def E_sigma(self, t, x2, x3):
        s = self.spec.sigma
        om = self.omega
        return np.exp(1j * s * (x2 * om[0] + x3 * om[1] - s * np.asarray(t)))

    def amplitude(self, A_side: MagneticPotential) -> Callable:
        return build_amplitude(A_side, self.omega)


def window_components(spec: ProbeSpec, A: MagneticPotential) -> GOComponents:
    """Probe of the recovery family for the difference potential ``A``.

    Raises :class:`ProbeError` if the support of ``phi0`` leaves
    ``B(z1', 1/4)`` or meets the outgoing half plane.
    """
    prof = WindowProfile(spec)
    comp = GOComponents(spec, A, prof)
    # support check on a dense sample of the profile's bounding box
    om, pp = np.asarray(spec.omega, float), spec.perp
    s = np.linspace(-spec.r, -spec.r + H_SUPPORT, 41)
    tau = np.linspace(spec.z0_coord - WINDOW_RADIUS, spec.z0_coord + WINDOW_RADIUS, 41)
    S, Tau = np.meshgrid(s, tau, indexing="ij")
    y2 = S * om[0] + Tau * pp[0]
    y3 = S * om[1] + Tau * pp[1]
    v = np.abs(comp.phi0(y2, y3))
    nz = v > 0
    if np.any(nz):
        dist = np.hypot(y2[nz] - spec.z1[0], y3[nz] - spec.z1[1])
        if dist.max() >= 0.25:
            raise ProbeError("supp phi0 is not contained in B(z1', 1/4)")
        if (y2[nz] * om[0] + y3[nz] * om[1]).max() >= 0:
            raise ProbeError("supp phi0 meets the half plane x'.omega' >= 0")
    return comp


def broad_components(probe: BroadProbe, A: MagneticPotential | None = None) -> GOComponents:
    return GOComponents(probe, A if A is not None else ZERO_POTENTIAL, RoundProfile(probe.center, probe.radius))


class GOLift:
    """Grid lift E_sigma(t) * sum_m S_m(x) g_m(x' - 2 sigma t omega').

    ``terms`` pairs static node arrays ``S_m`` (shape n1 x n2 x n3) with
    callables ``g_m(y2, y3)``.
    """

    def __init__(self, grid: WaveguideGrid, sigma: float, omega, terms: list[tuple[np.ndarray, Callable]]):
        self.grid = grid
        self.sigma = float(sigma)
        self.omega = np.asarray(omega, float)
        self.terms = terms
        X2, X3 = grid.cs.mesh
        self._X2, self._X3 = X2, X3

    def _eval(self, t, X2, X3, pick=None):
        s, om = self.sigma, self.omega
        shift = 2 * s * t
        E = np.exp(1j * s * (X2 * om[0] + X3 * om[1] - s * t))
        out = 0.0
        for S, g in self.terms:
            prof = g(X2 - shift * om[0], X3 - shift * om[1])
            Sv = S if pick is None else S[:, pick[0], pick[1]]
            out = out + Sv * (E * prof)[None, ...]
        return np.broadcast_to(out, (self.grid.n1,) + np.shape(X2)).astype(complex)

    def values(self, t: float) -> np.ndarray:
        return self._eval(t, self._X2, self._X3)

    def trace(self, t: float) -> np.ndarray:
        """Values at the lateral boundary samples, shape (n1, n_b)."""
        sides = self.grid.cs.sides
        return self._eval(t, sides.x2, sides.x3, pick=(sides.i2, sides.i3))

    def scaled(self, c: complex) -> "GOLift":
        return GOLift(self.grid, self.sigma, self.omega, [(c * S, g) for S, g in self.terms])


def _static(comp: GOComponents, grid: WaveguideGrid):
    X1, X2, X3 = grid.mesh
    P = comp.P(X1, X2, X3)
    P_rho = comp.P_rho(X1, X2, X3) if isinstance(comp.spec, ProbeSpec) else None
    return X1, X2, X3, P, P_rho


def _half_line(A: MagneticPotential, omega, X1, X2, X3):
    """H(x) = int_{-inf}^0 omega'.A'(x1, x' + tau omega') d tau."""
    if A.is_zero:
        return np.zeros(X1.shape)
    return ray_integral(_omega_dot(A, omega), X1, X2, X3, omega, A.support_radius, lo=-np.inf, hi=0.0)


def go_lift(comp: GOComponents, grid: WaveguideGrid, A_side: MagneticPotential | None, side: int = 2) -> GOLift:
    """Canonical grid lift of the GO main part.

    Side 2 uses ``phi2 = exp(-2 i k pi x1) phi``.  Side 1 uses
    ``phi1 = exp(2 i theta x1) d_j conj(phi)``, the theta-quasi-periodic
    version of ``d_j conj(phi)``.  For a :class:`BroadProbe` both sides use
    ``phi`` itself.
    """
    spec = comp.spec
    om = comp.omega
    A_side = A_side if A_side is not None else ZERO_POTENTIAL
    X1, X2, X3, P, P_rho = _static(comp, grid)
    Hs = _half_line(A_side, om, X1, X2, X3)
    theta = spec.theta
    prof = comp.profile
    if not isinstance(spec, ProbeSpec):
        S = np.exp(1j * theta * X1 + 0.5j * P - 1j * Hs)
        return GOLift(grid, spec.sigma, om, [(S, lambda y2, y3: prof(y2, y3)[0])])
    if side == 2:
        S = np.exp(1j * (theta - 2 * np.pi * spec.k) * X1 + 0.5j * P - 1j * Hs)
        return GOLift(grid, spec.sigma, om, [(S, lambda y2, y3: prof(y2, y3)[0])])
    if side == 1:
        base = np.exp(1j * theta * X1 - 0.5j * P - 1j * Hs)
        jj = spec.j - 1

        def conj_phi0(y2, y3):
            return np.conj(prof(y2, y3)[0])

        def conj_dphi0(y2, y3):
            return np.conj(prof(y2, y3)[jj])

        return GOLift(grid, spec.sigma, om, [(-0.5j * P_rho * base, conj_phi0), (base, conj_dphi0)])
    raise ValueError("side must be 1 or 2")


def go_boundary_data(comp: GOComponents, grid: WaveguideGrid, A_side: MagneticPotential | None, side: int = 2):
    """Trace of the GO main part on the lateral boundary plus its canonical lift.

    Returns ``(trace, lift)`` with ``trace`` of shape (n_t + 1, n1, n_b).
    """
    lift = go_lift(comp, grid, A_side, side)
    trace = np.stack([lift.trace(t) for t in grid.t])
    return trace, lift


def check_resolution(sigma: float, grid: WaveguideGrid, points_per_wavelength: float = 8.0) -> None:
    """Require sigma h' <= 2 pi / 8 and dt <= 0.2 / sigma^2."""
    if sigma * grid.cs.h > 2 * np.pi / points_per_wavelength + 1e-12:
        raise ResolutionError(
            f"sigma h' = {sigma * grid.cs.h:.3f} exceeds 2 pi / {points_per_wavelength:g}"
        )
    if grid.dt > 0.2 / sigma**2 + 1e-15:
        raise ResolutionError(f"dt = {grid.dt:.3g} exceeds 0.2 / sigma^2 = {0.2 / sigma**2:.3g}")


@dataclass
class RemainderResult:
    sigma: float
    psi: FiberField | None
    psi_l2: float
    grad_psi_l2: float
    n_norm: float
    source_l1: float


def go_remainder(
    A: MagneticPotential | None,
    comp: GOComponents,
    grid: WaveguideGrid,
    side: int = 2,
    keep_field: bool = False,
    n_norm: float | None = None,
) -> RemainderResult:
    """Remainder psi = u - (GO main part) for the probe on ``grid``.

    Side 2 is the forward construction (psi(0) = 0), side 1 the backward one
    (psi(T) = 0).  psi solves the discrete equation with source equal to
    minus the discrete residual of the lift, so ``lift + psi`` is an exact
    discrete solution.
    """
    check_resolution(comp.spec.sigma, grid)
    A = A if A is not None else ZERO_POTENTIAL
    op = assemble_operator(A, comp.spec.theta, grid)
    lift = go_lift(comp, grid, A, side)
    orientation = FORWARD if side == 2 else BACKWARD

    w = np.asarray(grid.weights)
    src_norms = []

    class _Neg:
        def half_steps(self, g):
            prev = lift.values(g.t[0])
            for n in range(g.n_t):
                nxt = lift.values(g.t[n + 1])
                r = -lift_residual(op, prev, nxt, g.dt)
                src_norms.append(np.sqrt(np.sum(np.abs(r) ** 2 * w)))
                yield r
                prev = nxt

    tw = grid.time_weights
    l2 = 0.0
    g2 = 0.0
    vals = np.zeros((grid.n_t + 1,) + grid.node_shape, dtype=complex) if keep_field else None
    for n, v in march(op, _Neg(), orientation):
        full = op.from_interior(v)
        l2 += tw[n] * float(np.sum(np.abs(full) ** 2 * w))
        g2 += tw[n] * float(_grad_single(full, grid, comp.spec.theta))
        if keep_field:
            vals[n] = full
    if n_norm is None:
        n_norm = n_omega_norm(comp)
    psi = FiberField(grid, comp.spec.theta, vals, orientation) if keep_field else None
    src = grid.dt * float(np.sum(src_norms))
    return RemainderResult(comp.spec.sigma, psi, float(np.sqrt(l2)), float(np.sqrt(g2)), n_norm, src)


def _grad_single(u: np.ndarray, grid: WaveguideGrid, theta: float) -> float:
    from .pde import _grad_sq

    return float(_grad_sq(u[None], grid, theta)[0])


# ----------------------------------------------------------------------
# N_omega norm
# ----------------------------------------------------------------------
def n_omega_norm(comp: GOComponents, n1: int = 16, n_box: int = 96, margin: float = 0.05, parts: bool = False):
    """||phi||_{H^2} + ||omega'.grad phi||_{H^2} over (0,1) x R^2.

    Spectral derivatives on a box aligned with omega' that contains the
    profile support.  The H^2 norm sums |D^a phi|^2 over ordered index
    pairs (the Frobenius form), which is rotation invariant.  With
    ``parts=True`` the per-order squared seminorms of phi are returned as
    well.
    """
    om = comp.omega
    pp = _perp(om)
    prof = comp.profile
    c = np.asarray(prof.support_center, float)
    half = prof.support_radius + margin
    s = np.linspace(-half, half, n_box, endpoint=False)
    ds = s[1] - s[0]
    x1 = np.arange(n1) / n1
    X1, S, Tau = np.meshgrid(x1, s, s, indexing="ij")
    Y2 = c[0] + S * om[0] + Tau * pp[0]
    Y3 = c[1] + S * om[1] + Tau * pp[1]
    theta = comp.spec.theta
    f = comp.phi(X1, Y2, Y3) * np.exp(-1j * theta * X1)
    if not np.any(f):
        return (0.0, [0.0, 0.0, 0.0]) if parts else 0.0
    k1 = 2 * np.pi * np.fft.fftfreq(n1, d=1.0 / n1) + theta
    ks = 2 * np.pi * np.fft.fftfreq(n_box, d=ds)
    K = np.meshgrid(k1, ks, ks, indexing="ij")
    F = np.fft.fftn(f)
    vol = (1.0 / n1) * ds * ds
    # Parseval: sum |f|^2 vol = sum |F|^2 vol / N
    N = f.size

    def norms(Fh):
        orders = [0.0, 0.0, 0.0]
        p = np.abs(Fh) ** 2 * vol / N
        orders[0] = float(p.sum())
        orders[1] = float(sum((p * K[a] ** 2).sum() for a in range(3)))
        orders[2] = float(sum((p * K[a] ** 2 * K[b] ** 2).sum() for a in range(3) for b in range(3)))
        return orders

    o_phi = norms(F)
    o_dphi = norms(F * 1j * K[1])  # d/ds = omega'.grad in rotated coordinates
    total = np.sqrt(sum(o_phi)) + np.sqrt(sum(o_dphi))
    if parts:
        return float(total), o_phi
    return float(total)
