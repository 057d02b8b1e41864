"""Closed-form magnetic potentials, gauge functions and magnetic fields.

Every scalar field is an :class:`Expr`: a small expression tree whose nodes
know their value, gradient and Hessian in closed form.  Potentials are then
triples of expressions, so magnetic fields, divergences and the ray
quantities used by the probes never rely on numerical differentiation.

Coordinates are ``(x1, x2, x3)``; ``x1`` is the periodic axis of the
waveguide and ``x' = (x2, x3)`` the cross-section variable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Coord",
    "Cos1",
    "Bump",
    "Plateau",
    "standard_bump",
    "MagneticPotential",
    "GaugeFunction",
    "PotentialPair",
    "CertificationError",
    "gauge_transform",
    "beta",
    "extend_by_zero",
    "PRESETS",
    "make_potential",
]

Jet = tuple[np.ndarray, list[np.ndarray], list[list[np.ndarray]]]


# ----------------------------------------------------------------------
# expression algebra
# ----------------------------------------------------------------------
class Expr:
    """Scalar field on R^3 with analytic derivatives up to order two."""

    #: cross-section support radius about ``center``; ``inf`` if unbounded
    support_radius: float = np.inf
    center: tuple[float, float] = (0.0, 0.0)

    def jet(self, x1, x2, x3, order: int = 2) -> Jet:
        raise NotImplementedError

    def __call__(self, x1, x2, x3) -> np.ndarray:
        return self.jet(x1, x2, x3, order=0)[0]

    def grad(self, x1, x2, x3) -> list[np.ndarray]:
        return self.jet(x1, x2, x3, order=1)[1]

    def hessian(self, x1, x2, x3) -> list[list[np.ndarray]]:
        return self.jet(x1, x2, x3, order=2)[2]

    def partial(self, k: int) -> "Expr":
        """The derivative with respect to x_{k+1} as a new expression (order one)."""
        return Partial(self, k)

    # algebra
    def __add__(self, other):
        return Sum(self, _as_expr(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Sum(self, Scaled(_as_expr(other), -1.0))

    def __rsub__(self, other):
        return Sum(_as_expr(other), Scaled(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return Scaled(self, float(other))
        return Product(self, _as_expr(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return Scaled(self, -1.0)

    @property
    def is_zero(self) -> bool:
        return False


def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(float(v))


class Const(Expr):
    def __init__(self, c: float):
        self.c = float(c)
        self.support_radius = 0.0 if self.c == 0.0 else np.inf

    def jet(self, x1, x2, x3, order=2):
        z = np.zeros(np.broadcast(x1, x2, x3).shape)
        g = [z, z, z]
        return z + self.c, g, [[z, z, z], [z, z, z], [z, z, z]]

    @property
    def is_zero(self):
        return self.c == 0.0


ZERO = Const(0.0)


class Coord(Expr):
    """The coordinate x_{k+1} (k = 0, 1, 2)."""

    def __init__(self, k: int, shift: float = 0.0):
        self.k = k
        self.shift = shift

    def jet(self, x1, x2, x3, order=2):
        xs = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float), np.asarray(x3, float))
        z = np.zeros(xs[0].shape)
        one = z + 1.0
        g = [z, z, z]
        g[self.k] = one
        return xs[self.k] - self.shift, g, [[z, z, z], [z, z, z], [z, z, z]]


class Cos1(Expr):
    """p + q cos(2 pi m x1 + phase): 1-periodic profile in x1."""

    def __init__(self, p: float = 0.0, q: float = 1.0, phase: float = 0.0, m: int = 1):
        self.p, self.q, self.phase, self.m = float(p), float(q), float(phase), int(m)

    def jet(self, x1, x2, x3, order=2):
        x1b = np.broadcast_to(np.asarray(x1, float), np.broadcast(x1, x2, x3).shape)
        w = 2 * np.pi * self.m
        arg = w * x1b + self.phase
        c, s = np.cos(arg), np.sin(arg)
        z = np.zeros(x1b.shape)
        g = [-self.q * w * s, z, z]
        H = [[-self.q * w * w * c, z, z], [z, z, z], [z, z, z]]
        return self.p + self.q * c, g, H


def standard_bump(r):
    """chi(r) = exp(1 - 1/(1 - r^2)) for |r| < 1 and 0 otherwise."""
    r = np.asarray(r, dtype=float)
    s = r * r
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
    return out


def _bump_of_s(s, order):
    """chi(s) = exp(1 - 1/(1-s)) with its first two s-derivatives."""
    s = np.asarray(s, dtype=float)
    v = np.zeros_like(s)
    d1 = np.zeros_like(s)
    d2 = np.zeros_like(s)
    inside = s < 1.0
    u = 1.0 / (1.0 - s[inside])
    c = np.exp(1.0 - u)
    v[inside] = c
    if order >= 1:
        d1[inside] = -u * u * c
    if order >= 2:
        d2[inside] = c * (u**4 - 2 * u**3)
    return v, d1, d2


class Bump(Expr):
    """amplitude * chi(|x' - c| / radius), independent of x1."""

    def __init__(self, center: Sequence[float] = (0.0, 0.0), radius: float = 0.4, amplitude: float = 1.0):
        self.center = (float(center[0]), float(center[1]))
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        self.support_radius = self.radius

    def jet(self, x1, x2, x3, order=2):
        shape = np.broadcast(x1, x2, x3).shape
        d2 = np.broadcast_to(np.asarray(x2, float) - self.center[0], shape)
        d3 = np.broadcast_to(np.asarray(x3, float) - self.center[1], shape)
        r2 = self.radius**2
        s = (d2 * d2 + d3 * d3) / r2
        v, c1, c2 = _bump_of_s(s, order)
        a = self.amplitude
        z = np.zeros(shape)
        ds = [z, 2 * d2 / r2, 2 * d3 / r2]
        g = [z, a * c1 * ds[1], a * c1 * ds[2]]
        H = [[z, z, z], [z, None, None], [z, None, None]]
        for i in (1, 2):
            for j in (1, 2):
                H[i][j] = a * (c2 * ds[i] * ds[j] + (c1 * 2 / r2 if i == j else 0.0))
        return a * v, g, H


def _smoothstep(tau, order):
    """C-infinity transition S(tau): 0 for tau <= 0, 1 for tau >= 1."""
    tau = np.asarray(tau, dtype=float)

    def f(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    def f1(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos]) / x[pos] ** 2
        return out

    def f2(x):
        out = np.zeros_like(x)
        pos = x > 0
        xp = x[pos]
        out[pos] = np.exp(-1.0 / xp) * (1.0 / xp**4 - 2.0 / xp**3)
        return out

    a, b = f(tau), f(1.0 - tau)
    D = a + b
    S = a / D
    if order == 0:
        return S, None, None
    a1, b1 = f1(tau), -f1(1.0 - tau)
    N = a1 * b - a * b1
    S1 = N / D**2
    if order == 1:
        return S, S1, None
    a2, b2 = f2(tau), f2(1.0 - tau)
    N1 = a2 * b - a * b2
    D1 = 2 * D * (a1 + b1)
    S2 = (N1 * D**2 - N * D1) / D**4
    return S, S1, S2


class Plateau(Expr):
    """Radial cutoff equal to 1 on |x'-c| <= r0 and 0 for |x'-c| >= r1."""

    def __init__(self, r0: float, r1: float, center: Sequence[float] = (0.0, 0.0)):
        if not 0 < r0 < r1:
            raise ValueError("need 0 < r0 < r1")
        self.r0, self.r1 = float(r0), float(r1)
        self.center = (float(center[0]), float(center[1]))
        self.support_radius = self.r1

    def jet(self, x1, x2, x3, order=2):
        shape = np.broadcast(x1, x2, x3).shape
        d2 = np.broadcast_to(np.asarray(x2, float) - self.center[0], shape)
        d3 = np.broadcast_to(np.asarray(x3, float) - self.center[1], shape)
        r = np.hypot(d2, d3)
        width = self.r1 - self.r0
        tau = (self.r1 - r) / width
        S, S1, S2 = _smoothstep(tau, order)
        z = np.zeros(shape)
        g = [z, z, z]
        H = [[z, z, z], [z, z, z], [z, z, z]]
        if order >= 1:
            # the transition region excludes r = 0, so 1/r is safe where S1 != 0
            rs = np.where(r > 0, r, 1.0)
            rk = [None, d2 / rs, d3 / rs]
            dS = -S1 / width
            g = [z, dS * rk[1], dS * rk[2]]
            if order >= 2:
                ddS = S2 / width**2
                for i in (1, 2):
                    for j in (1, 2):
                        rij = ((1.0 if i == j else 0.0) - rk[i] * rk[j]) / rs
                        H[i][j] = ddS * rk[i] * rk[j] + dS * rij
        return S, g, H


class Sum(Expr):
    def __init__(self, a: Expr, b: Expr):
        self.a, self.b = a, b
        self.support_radius = max(a.support_radius, b.support_radius)
        self.center = a.center if a.support_radius >= b.support_radius else b.center

    def jet(self, x1, x2, x3, order=2):
        va, ga, Ha = self.a.jet(x1, x2, x3, order)
        vb, gb, Hb = self.b.jet(x1, x2, x3, order)
        g = [ga[i] + gb[i] for i in range(3)] if order >= 1 else ga
        H = [[Ha[i][j] + Hb[i][j] for j in range(3)] for i in range(3)] if order >= 2 else Ha
        return va + vb, g, H

    @property
    def is_zero(self):
        return self.a.is_zero and self.b.is_zero


class Scaled(Expr):
    def __init__(self, a: Expr, c: float):
        self.a, self.c = a, float(c)
        self.support_radius = a.support_radius if c != 0 else 0.0
        self.center = a.center

    def jet(self, x1, x2, x3, order=2):
        v, g, H = self.a.jet(x1, x2, x3, order)
        c = self.c
        g = [c * gi for gi in g] if order >= 1 else g
        H = [[c * h for h in row] for row in H] if order >= 2 else H
        return c * v, g, H

    @property
    def is_zero(self):
        return self.c == 0.0 or self.a.is_zero


class Product(Expr):
    def __init__(self, a: Expr, b: Expr):
        self.a, self.b = a, b
        if a.support_radius <= b.support_radius:
            self.support_radius, self.center = a.support_radius, a.center
        else:
            self.support_radius, self.center = b.support_radius, b.center

    def jet(self, x1, x2, x3, order=2):
        va, ga, Ha = self.a.jet(x1, x2, x3, order)
        vb, gb, Hb = self.b.jet(x1, x2, x3, order)
        g, H = ga, Ha
        if order >= 1:
            g = [ga[i] * vb + va * gb[i] for i in range(3)]
        if order >= 2:
            H = [
                [Ha[i][j] * vb + ga[i] * gb[j] + ga[j] * gb[i] + va * Hb[i][j] for j in range(3)]
                for i in range(3)
            ]
        return va * vb, g, H

    @property
    def is_zero(self):
        return self.a.is_zero or self.b.is_zero


class Partial(Expr):
    """First derivative of an expression; its own derivatives go to order one."""

    def __init__(self, a: Expr, k: int):
        self.a, self.k = a, k
        self.support_radius = a.support_radius
        self.center = a.center

    def jet(self, x1, x2, x3, order=2):
        if order >= 2:
            raise NotImplementedError("second derivatives of a derivative are not available")
        v, g, H = self.a.jet(x1, x2, x3, order + 1)
        if order == 0:
            return g[self.k], g, H
        return g[self.k], [H[self.k][j] for j in range(3)], H

    @property
    def is_zero(self):
        return self.a.is_zero


# ----------------------------------------------------------------------
# potentials
# ----------------------------------------------------------------------
class CertificationError(ValueError):
    """A potential, gauge function or pair violates its declared invariant."""


@dataclass(frozen=True)
class MagneticPotential:
    """A = (a1, a2, a3), 1-periodic in x1, with A' supported in B(0, support_radius).

    ``M`` records the W^{3,inf} bound claimed for the preset; it is carried as
    metadata only.
    """

    a1: Expr
    a2: Expr
    a3: Expr
    name: str = "custom"
    support_radius: float | None = None
    M: float | None = None

    def __post_init__(self):
        if self.support_radius is None:
            r = max(c.support_radius + np.hypot(*c.center) for c in self.components)
            object.__setattr__(self, "support_radius", float(r))

    @property
    def components(self) -> tuple[Expr, Expr, Expr]:
        return (self.a1, self.a2, self.a3)

    @property
    def is_zero(self) -> bool:
        return all(c.is_zero for c in self.components)

    def values(self, x1, x2, x3) -> list[np.ndarray]:
        return [c(x1, x2, x3) for c in self.components]

    def jacobian(self, x1, x2, x3) -> list[list[np.ndarray]]:
        """J[i][j] = d a_{i+1} / d x_{j+1}."""
        return [c.grad(x1, x2, x3) for c in self.components]

    def divergence(self, x1, x2, x3) -> np.ndarray:
        J = self.jacobian(x1, x2, x3)
        return J[0][0] + J[1][1] + J[2][2]

    def __add__(self, other: "MagneticPotential") -> "MagneticPotential":
        return MagneticPotential(
            self.a1 + other.a1,
            self.a2 + other.a2,
            self.a3 + other.a3,
            name=f"({self.name}+{other.name})",
            support_radius=max(self.support_radius, other.support_radius),
        )

    def __sub__(self, other: "MagneticPotential") -> "MagneticPotential":
        return self + other.scaled(-1.0)

    def scaled(self, c: float) -> "MagneticPotential":
        return MagneticPotential(
            self.a1 * c, self.a2 * c, self.a3 * c, name=f"{c:g}*{self.name}", support_radius=self.support_radius
        )

    def check_periodic(self, n: int = 200, seed: int = 0, radius: float = 1.0) -> float:
        """Largest |a_j(x1 + 1, x') - a_j(x1, x')| on a random sample."""
        rng = np.random.default_rng(seed)
        x1 = rng.uniform(-2, 2, n)
        x2, x3 = rng.uniform(-radius, radius, (2, n))
        return max(float(np.abs(c(x1 + 1, x2, x3) - c(x1, x2, x3)).max()) for c in self.components)

    def check_support(self, n: int = 400, seed: int = 0, outer: float = 3.0) -> float:
        """Largest |A'| sampled outside the declared support disk."""
        rng = np.random.default_rng(seed)
        r = rng.uniform(self.support_radius * (1 + 1e-9), max(outer, 2 * self.support_radius), n)
        ang = rng.uniform(0, 2 * np.pi, n)
        x1 = rng.uniform(0, 1, n)
        x2, x3 = r * np.cos(ang), r * np.sin(ang)
        return max(float(np.abs(c(x1, x2, x3)).max()) for c in (self.a2, self.a3))


ZERO_POTENTIAL = MagneticPotential(ZERO, ZERO, ZERO, name="zero", support_radius=0.0)


@dataclass(frozen=True)
class GaugeFunction:
    """Scalar gauge Psi; must vanish on the lateral boundary of its cross-section."""

    psi: Expr
    name: str = "gauge"

    def __call__(self, x1, x2, x3):
        return self.psi(x1, x2, x3)

    def boundary_defect(self, cs) -> float:
        """max |Psi| over the lateral boundary nodes (all x1 samples)."""
        mask = cs.boundary
        X2, X3 = cs.mesh
        x1 = np.linspace(0, 1, 17)[:, None]
        return float(np.abs(self.psi(x1, X2[mask][None, :], X3[mask][None, :])).max(initial=0.0))

    def certify(self, cs, tol: float = 1e-12) -> None:
        d = self.boundary_defect(cs)
        if d > tol:
            raise CertificationError(f"gauge function does not vanish on the lateral boundary (|Psi| = {d:.3e})")


def gauge_transform(A: MagneticPotential, psi: GaugeFunction | Expr) -> MagneticPotential:
    """A + grad Psi."""
    e = psi.psi if isinstance(psi, GaugeFunction) else psi
    if e.is_zero:
        return A
    return MagneticPotential(
        A.a1 + e.partial(0),
        A.a2 + e.partial(1),
        A.a3 + e.partial(2),
        name=f"{A.name}+grad",
        support_radius=max(A.support_radius, e.support_radius + np.hypot(*e.center)),
    )


def beta(A: MagneticPotential, i: int, j: int) -> Callable:
    """beta_ij = d a_i / d x_j - d a_j / d x_i for i, j in {1, 2, 3}."""
    if i == j:
        raise ValueError("beta_ij needs i != j")
    if not (1 <= i <= 3 and 1 <= j <= 3):
        raise ValueError("indices must lie in {1, 2, 3}")
    ai, aj = A.components[i - 1], A.components[j - 1]

    def field(x1, x2, x3):
        return ai.grad(x1, x2, x3)[j - 1] - aj.grad(x1, x2, x3)[i - 1]

    return field


@dataclass(frozen=True)
class PotentialPair:
    """Two potentials that agree to first order on the lateral boundary."""

    A1: MagneticPotential
    A2: MagneticPotential
    name: str = "pair"

    @property
    def difference(self) -> MagneticPotential:
        d = self.A2 - self.A1
        return MagneticPotential(
            d.a1, d.a2, d.a3, name=f"{self.A2.name}-{self.A1.name}",
            support_radius=max(self.A1.support_radius, self.A2.support_radius),
        )

    @property
    def identical(self) -> bool:
        return self.A1 is self.A2 or self.difference.is_zero

    def boundary_defect(self, cs, n1: int = 9) -> float:
        """max over lateral boundary samples of |A| and |dA| for the difference."""
        d = self.difference
        mask = cs.boundary
        X2, X3 = cs.mesh
        x1 = np.linspace(0, 1, n1)[:, None]
        y2, y3 = X2[mask][None, :], X3[mask][None, :]
        worst = 0.0
        for c in d.components:
            v, g, _ = c.jet(x1, y2, y3, order=1)
            worst = max(worst, float(np.abs(v).max(initial=0.0)))
            worst = max(worst, max(float(np.abs(gi).max(initial=0.0)) for gi in g))
        return worst

    def certify(self, cs, tol: float = 1e-12, margins: bool = True) -> None:
        """Raise unless the pair matches to first order on the boundary and is admissible."""
        defect = self.boundary_defect(cs)
        if defect > tol:
            raise CertificationError(f"A1 and A2 differ on the lateral boundary (defect {defect:.3e})")
        if margins:
            from .domain import admissibility_margin, poincare_constant

            C = poincare_constant(cs)
            for label, A in (("A1", self.A1), ("A2", self.A2)):
                m = admissibility_margin(A, cs, C=C)
                if m <= 0:
                    raise CertificationError(f"{label} is not admissible (margin {m:.3e})")


def extend_by_zero(pair: PotentialPair, cs) -> Callable:
    """Evaluator of A' = A2' - A1' on R^3, set to zero outside Omega'."""
    d = pair.difference

    def evaluate(x1, x2, x3):
        inside = cs.contains(x2, x3)
        a2 = np.where(inside, d.a2(x1, x2, x3), 0.0)
        a3 = np.where(inside, d.a3(x1, x2, x3), 0.0)
        return a2, a3

    return evaluate


# ----------------------------------------------------------------------
# preset library
# ----------------------------------------------------------------------
def _bump_potential(
    amplitude: float = 0.3,
    radius: float = 0.35,
    center2: float = 0.0,
    center3: float = 0.0,
    p2: float = 1.0,
    q2: float = 0.5,
    phase2: float = 0.0,
    p3: float = -0.5,
    q3: float = 0.5,
    phase3: float = 1.0,
    a1_amplitude: float = 0.0,
    shift: float = 0.1,
) -> MagneticPotential:
    """a2 = c2(x1) chi_1(x'), a3 = c3(x1) chi_2(x'), optional a1 of the same form.

    The two cross-section bumps are offset by ``shift`` so that the field
    beta_23 has no special symmetry.
    """
    c = (center2, center3)
    b1 = Bump((c[0] + shift, c[1]), radius - abs(shift), amplitude)
    b2 = Bump((c[0], c[1] - shift), radius - abs(shift), amplitude)
    a2 = Cos1(p2, q2, phase2) * b1
    a3 = Cos1(p3, q3, phase3) * b2
    a1 = Cos1(0.0, 1.0, 0.3) * Bump(c, radius, a1_amplitude) if a1_amplitude else ZERO
    return MagneticPotential(a1, a2, a3, name="bump", support_radius=np.hypot(*c) + radius)


def _constant_field(strength: float = 1.0, r0: float = 0.15, r1: float = 0.35) -> MagneticPotential:
    """A = strength * (0, -x3/2, x2/2) * plateau, so beta_23 = -strength on the plateau."""
    cut = Plateau(r0, r1)
    a2 = Coord(2) * cut * (-0.5 * strength)
    a3 = Coord(1) * cut * (0.5 * strength)
    return MagneticPotential(ZERO, a2, a3, name="constant_field", support_radius=r1)


def _pure_gradient(amplitude: float = 0.3, radius: float = 0.35) -> MagneticPotential:
    psi = Cos1(1.0, 0.5, 0.0) * Bump((0.0, 0.0), radius, amplitude)
    return gauge_transform(ZERO_POTENTIAL, psi)


def _zero() -> MagneticPotential:
    return ZERO_POTENTIAL


PRESETS: dict[str, Callable[..., MagneticPotential]] = {
    "zero": _zero,
    "bump": _bump_potential,
    "constant_field": _constant_field,
    "gradient": _pure_gradient,
}


def make_potential(name: str, **params) -> MagneticPotential:
    """Instantiate a preset by name; unknown names raise ``KeyError``."""
    if name not in PRESETS:
        raise KeyError(f"unknown potential preset {name!r}; known: {sorted(PRESETS)}")
    return PRESETS[name](**params)
