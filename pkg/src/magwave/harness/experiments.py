"""Experiments behind the CLI subcommands.

Each ``run_*`` function takes an :class:`ExperimentConfig` and returns plain
rows; writing files is left to the CLI so the functions are easy to test.
The ``check_*`` functions are the identity suites used by ``verify``.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..dn import dn_norm_estimate, dn_pair, dn_response, green_check, xtheta_norm_surrogate
from ..domain import WaveguideGrid
from ..fbg import CellFunction, parseval_defect
from ..fields import (
    Bump,
    Coord,
    Cos1,
    GaugeFunction,
    MagneticPotential,
    PotentialPair,
    beta,
    gauge_transform,
)
from ..pde import (
    SourceTerm,
    assemble_operator,
    cauchy_evolve,
    cayley_phase,
    dirichlet_mode,
    solve_source,
)
from ..probes import BroadProbe, ProbeSpec, Window, broad_components, build_amplitude, go_lift, go_remainder
from ..xray import (
    FourierSampleGrid,
    bracket,
    choose_j,
    direction_for,
    extract_beta_hat,
    fourier_slice_check,
    oracle_grid,
    lattice,
    reconstruct_beta23,
    telescope_check,
    window_sweep,
)
from .config import ExperimentConfig


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------
def _map(fn: Callable, items: Sequence, workers: int) -> list:
    """Ordered map, in a process pool when workers > 1."""
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(min(workers, len(items))) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Least-squares slope of log y against log x; None with fewer than two points."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size < 2 or np.any(y <= 0):
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def ramp_lift(grid: WaveguideGrid, theta: float, T: float | None = None):
    """Lift (t/T)^2 exp(i theta x1) (1 + x2 + x3^2): nonzero lateral data, zero at t = 0."""
    X1, X2, X3 = grid.mesh
    T = grid.T if T is None else T
    G = np.exp(1j * theta * X1) * (1.0 + X2 + X3**2)

    class _Ramp:
        def values(self, t):
            return (t / T) ** 2 * G

    return _Ramp()


def terminal_lift(grid: WaveguideGrid, theta: float):
    """Lift 8 t (T - t)^2 / T^3 exp(i theta x1) (1 + x2 + x3^2), zero at t = T."""
    X1, X2, X3 = grid.mesh
    T = grid.T
    G = np.exp(1j * theta * X1) * (1.0 + X2 + X3**2)

    class _Term:
        def values(self, t):
            return 8.0 * t * (T - t) ** 2 / T**3 * G

    return _Term()


def smooth_source(grid: WaveguideGrid, theta: float) -> SourceTerm:
    """Interior source sin^2(pi t / T) exp(i theta x1) cos(pi s2) cos(pi s3) (1 + 0.3 cos 2 pi x1)."""
    cs = grid.cs
    a2, a3 = cs.half_widths
    X1, X2, X3 = grid.mesh
    prof = (
        np.exp(1j * theta * X1)
        * np.cos(np.pi * X2 / (2 * a2))
        * np.cos(np.pi * X3 / (2 * a3))
        * (1 + 0.3 * np.cos(2 * np.pi * X1))
    )
    T = grid.T
    return SourceTerm(
        lambda t: np.sin(np.pi * t / T) ** 2 * prof,
        lambda t: (np.pi / T) * np.sin(2 * np.pi * t / T) * prof,
    )


def config_gauge(cfg: ExperimentConfig) -> GaugeFunction:
    """Psi = amplitude (1 + cos(2 pi x1)/2) bump_radius(x') + tilt x2.

    A nonzero tilt makes Psi nonzero on the lateral boundary, which is what
    the gauge check is meant to catch.
    """
    psi = Cos1(1.0, 0.5, 0.0) * Bump((0.0, 0.0), cfg["gauge.radius"], cfg["gauge.amplitude"])
    if cfg["gauge.tilt"]:
        psi = psi + Coord(1) * cfg["gauge.tilt"]
    return GaugeFunction(psi, name="config")


# ----------------------------------------------------------------------
# identity checks
# ----------------------------------------------------------------------
@dataclass
class Check:
    name: str
    measured: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.measured) and self.measured <= self.tolerance)

    def row(self):
        return (self.name, self.measured, self.tolerance, self.passed)


CHECK_COLUMNS = ("name", "measured", "tolerance", "pass")


def random_cell_function(rng: np.random.Generator, n1: int = 8, n2: int = 6, span: int = 2) -> CellFunction:
    cells = rng.standard_normal((span, n1, n2)) + 1j * rng.standard_normal((span, n1, n2))
    return CellFunction(int(rng.integers(-3, 3)), cells, 1.0 / (n1 * n2))


def check_parseval(n_samples: int = 10, n_theta: int = 64, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    return max(parseval_defect(random_cell_function(rng), n_theta) for _ in range(n_samples))


def check_unitarity(A: MagneticPotential, theta: float, grid: WaveguideGrid, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    op = assemble_operator(A, theta, grid)
    u0 = np.zeros(grid.node_shape, dtype=complex)
    for m, p, q in ((0, 1, 1), (1, 2, 1), (-1, 1, 3)):
        e, _, _ = dirichlet_mode(grid, theta, m, p, q)
        u0 += complex(*rng.standard_normal(2)) * e
    u = cauchy_evolve(op, u0)
    norms = u.norms_in_time()
    return float(np.abs(norms / norms[0] - 1.0).max())


def check_duhamel(theta: float, grid: WaveguideGrid) -> float:
    """Relative error of the source solve against the discrete Duhamel formula."""
    op = assemble_operator(None, theta, grid)
    e, lam_h, _ = dirichlet_mode(grid, theta, 1, 1, 2)
    w = solve_source(op, SourceTerm(lambda t: e))
    mu = cayley_phase(lam_h, grid.dt)
    c = (np.exp(-1j * mu * grid.t) - 1.0) / lam_h
    exact = c[:, None, None, None] * e[None]
    return float(np.linalg.norm(w.values - exact) / np.linalg.norm(exact))


def gauge_trace_error(A: MagneticPotential, psi: GaugeFunction, theta: float, grid: WaveguideGrid) -> float:
    """Relative L^2 difference of the DN traces for (A, h) and (A + grad Psi, h)."""
    lift = ramp_lift(grid, theta)
    t1 = dn_response(assemble_operator(A, theta, grid), lift)
    t2 = dn_response(assemble_operator(gauge_transform(A, psi), theta, grid), lift)
    ref = t1.norm()
    return float((t1 - t2).norm() / ref) if ref > 0 else 0.0


def transport_residual(A: MagneticPotential, omega, n: int = 200, seed: int = 0, step: float = 2e-5, panels: int = 32) -> float:
    """max |(d_t + omega'.grad' + i omega'.A') b| by centred differences at random points."""
    rng = np.random.default_rng(seed)
    om = np.asarray(omega, float)
    b = build_amplitude(A, om, panels)
    t = rng.uniform(0.1, 1.5, n)
    x1 = rng.uniform(0, 1, n)
    x2, x3 = rng.uniform(-0.6, 0.6, (2, n))
    db_t = (b(t + step, x1, x2, x3) - b(t - step, x1, x2, x3)) / (2 * step)
    db_x = (b(t, x1, x2 + step * om[0], x3 + step * om[1]) - b(t, x1, x2 - step * om[0], x3 - step * om[1])) / (2 * step)
    a = om[0] * A.a2(x1, x2, x3) + om[1] * A.a3(x1, x2, x3)
    return float(np.abs(db_t + db_x + 1j * a * b(t, x1, x2, x3)).max())


def telescope_residual(A: MagneticPotential, sigma: float, T: float, n: int = 20, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        ang = rng.uniform(0, 2 * np.pi)
        om = (np.cos(ang), np.sin(ang))
        perp = np.array([-om[1], om[0]])
        # start upstream of the support so the ray crosses it
        start = rng.uniform(-0.3, 0.3) * perp - 0.8 * np.asarray(om)
        lhs, rhs = telescope_check(A, om, sigma, T, rng.uniform(0, 1), start)
        worst = max(worst, abs(lhs - rhs))
    return worst


def slice_residual(A: MagneticPotential, n: int = 10, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    R = max(A.support_radius, 1e-3)
    for _ in range(n):
        ang = rng.uniform(0, 2 * np.pi)
        om = (np.cos(ang), np.sin(ang))
        lhs, rhs = fourier_slice_check(A.a2, R, om, rng.uniform(-20, 20), rng.uniform(0, 1))
        worst = max(worst, abs(lhs - rhs))
    return worst


def green_mismatch(A: MagneticPotential, theta: float, grid: WaveguideGrid) -> float:
    op = assemble_operator(A, theta, grid)
    return green_check(op, smooth_source(grid, theta), terminal_lift(grid, theta)).mismatch


def run_verify(cfg: ExperimentConfig) -> list[Check]:
    theta = cfg["fibers.theta"][0]
    grid = cfg.grid()
    A = cfg.potential("A2")
    tol = lambda k: cfg[f"tolerances.{k}"]  # noqa: E731
    checks = [Check("fbg_parseval", check_parseval(cfg["fbg.samples"], cfg["fbg.n_theta"], cfg["run.seed"]), tol("parseval"))]
    checks.append(Check("unitarity", check_unitarity(A, theta, grid, cfg["run.seed"]), tol("unitarity")))
    if grid.cs.shape == "rectangle":
        checks.append(Check("duhamel", check_duhamel(theta, grid), tol("duhamel")))
        checks.append(Check("gauge_invariance", gauge_trace_error(A, config_gauge(cfg), theta, grid), tol("gauge")))
        checks.append(Check("green_identity", green_mismatch(A, theta, grid), tol("green")))
    checks.append(Check("transport", transport_residual(A, cfg.omega(), seed=cfg["run.seed"]), tol("transport")))
    D = cfg.pair().difference
    checks.append(Check("telescope", telescope_residual(D, min(cfg.sigmas()), cfg["time.T"], seed=cfg["run.seed"]), tol("telescope")))
    checks.append(Check("fourier_slice", slice_residual(A, seed=cfg["run.seed"]), tol("slice")))
    return checks


# ----------------------------------------------------------------------
# remainder decay
# ----------------------------------------------------------------------
GO_DECAY_COLUMNS = ("sigma", "psi_l2", "grad_psi_l2", "n_norm", "slope")


def _remainder_task(args):
    cfg, sigma, A = args
    grid = cfg.probe_grid(sigma)
    probe = BroadProbe(cfg.omega(), sigma, cfg["fibers.theta"][0], cfg["time.T"], cfg.enclosing_radius(), cfg["probes.profile_radius"])
    comp = broad_components(probe, A)
    res = go_remainder(A, comp, grid, side=2)
    return sigma, res.psi_l2, res.grad_psi_l2, res.n_norm


def run_go_decay(cfg: ExperimentConfig, workers: int = 1, A: MagneticPotential | None = None) -> list[tuple]:
    """Remainder norms of the broad probe for each configured sigma, with the fitted slope."""
    A = cfg.potential("A1") if A is None else A
    out = _map(_remainder_task, [(cfg, s, A) for s in cfg.sigmas()], workers)
    slope = loglog_slope([r[0] for r in out], [r[1] for r in out])
    return [r + (slope,) for r in out]


# ----------------------------------------------------------------------
# pairing consistency
# ----------------------------------------------------------------------
PAIRING_FIT_COLUMNS = ("sigma", "pde_re", "pde_im", "oracle_re", "oracle_im", "gap", "fit", "fit_residual")


def _pairing_task(args):
    cfg, sigma = args
    from ..xray import pairing_oracle

    om = cfg.omega()
    j, _ = choose_j(om)
    spec = ProbeSpec(om, sigma, cfg["fibers.theta"][0], cfg["time.T"], cfg.enclosing_radius(), k=cfg["probes.k"], j=j, window=cfg["probes.window"])
    pair = cfg.pair()
    return sigma, dn_pair(pair, spec, cfg.probe_grid(sigma)).value, pairing_oracle(spec, pair).value


def fit_inverse(sigma: Sequence[float], gap: Sequence[float]) -> tuple[float, float]:
    """Least-squares C in gap ~ C / sigma and the worst relative deviation from the fit."""
    s = np.asarray(sigma, float)
    g = np.asarray(gap, float)
    C = float(np.sum(g / s) / np.sum(1.0 / s**2))
    model = C / s
    return C, float(np.max(np.abs(g - model) / np.abs(model))) if C else float("inf")


def pairing_consistency(cfg: ExperimentConfig, workers: int = 1) -> list[tuple]:
    """PDE pairing against its oracle limit for each configured sigma, with the C/sigma fit."""
    out = _map(_pairing_task, [(cfg, s) for s in cfg.sigmas()], workers)
    gaps = [abs(p - o) for _, p, o in out]
    C, resid = fit_inverse([r[0] for r in out], gaps)
    return [(s, p.real, p.imag, o.real, o.imag, d, C, resid) for (s, p, o), d in zip(out, gaps)]


# ----------------------------------------------------------------------
# recovery
# ----------------------------------------------------------------------
SUMMARY_COLUMNS = ("path", "gamma", "retained", "mass_fraction", "parseval_norm", "true_norm", "rec_norm", "abs_error", "rel_error")


@dataclass
class RecoveryResult:
    samples: FourierSampleGrid
    gamma: float
    mass_fraction: float
    field: np.ndarray
    truth: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    retained: int
    parseval_norm: float
    true_norm: float
    rec_norm: float
    abs_error: float
    path: str

    @property
    def rel_error(self) -> float:
        return self.abs_error / self.true_norm if self.true_norm > 0 else 0.0

    def summary_row(self):
        return (self.path, self.gamma, self.retained, self.mass_fraction, self.parseval_norm, self.true_norm, self.rec_norm, self.abs_error, self.rel_error)


def _l2(values: np.ndarray, grid: WaveguideGrid) -> float:
    return float(np.sqrt(np.sum(np.abs(values) ** 2 * np.asarray(grid.weights))))


def truth_norm_sq(D: MagneticPotential, n1: int = 32, n: int = 160) -> float:
    """||beta23||^2 over the period cell by tensor trapezoid quadrature."""
    Rs = max(D.support_radius, 1e-12)
    x1 = np.arange(n1) / n1
    x = np.linspace(-Rs, Rs, n + 1)
    w = np.full(n + 1, x[1] - x[0])
    w[[0, -1]] *= 0.5
    X1, X2, X3 = np.meshgrid(x1, x, x, indexing="ij")
    B = beta(D, 2, 3)(X1, X2, X3)
    return float(np.sum(np.abs(B) ** 2 * w[None, :, None] * w[None, None, :]) / n1)


def choose_gamma(samples: FourierSampleGrid, target_mass: float) -> float:
    """Smallest cutoff whose retained Parseval sum reaches ``target_mass``."""
    br = bracket(samples.xi2, samples.xi3, samples.k)
    order = np.argsort(br, kind="stable")
    cum = np.cumsum(np.abs(samples.values[order]) ** 2 * samples.cell)
    hit = np.nonzero(cum >= target_mass * (1 - 1e-12))[0]
    idx = hit[0] if hit.size else order.size - 1
    return float(br[order][idx]) if order.size else 1.0


def recover(
    pair: PotentialPair,
    grid: WaveguideGrid,
    xi_max: float,
    k_max: int,
    gamma: float | None = None,
    mass: float = 0.99,
    workers: int = 1,
    samples: FourierSampleGrid | None = None,
) -> RecoveryResult:
    """Oracle-path extraction on the lattice plus cutoff reconstruction on the grid nodes."""
    D = pair.difference
    if samples is None and pair.identical:
        # nothing to extract; keep the lattice shape on the section's own radius
        Rs = grid.cs.enclosing_radius
        xi2, xi3, ks = lattice(Rs, xi_max, k_max)
        samples = FourierSampleGrid(Rs, xi2, xi3, ks, np.zeros(xi2.size, dtype=complex), "oracle", [f"oracle:{a:.6g},{b:.6g},{c}" for a, b, c in zip(xi2, xi3, ks)])
    elif samples is None:
        samples = oracle_grid(pair, xi_max, k_max, workers=workers)
    true_sq = truth_norm_sq(D) if not pair.identical else 0.0
    if gamma is None or gamma <= 0:
        gamma = choose_gamma(samples, mass * true_sq) if true_sq > 0 else 1.0
    keep = bracket(samples.xi2, samples.xi3, samples.k) <= gamma
    mass_fraction = samples.parseval_sum(keep) / true_sq if true_sq > 0 else 1.0
    x1, x2, x3 = grid.x1, grid.cs.x2, grid.cs.x3
    rec = reconstruct_beta23(samples, gamma, x1, x2, x3)
    # the lattice synthesis is 2R-periodic in x'; keep the support box only
    Rs = samples.support_radius
    box = (np.abs(x2)[:, None] <= Rs + 1e-12) & (np.abs(x3)[None, :] <= Rs + 1e-12)
    rec.field = rec.field * box[None]
    X1, X2, X3 = grid.mesh
    truth = beta(D, 2, 3)(X1, X2, X3) if not pair.identical else np.zeros(grid.node_shape)
    return RecoveryResult(
        samples, float(gamma), float(mass_fraction), rec.field, truth, x1, x2, x3, rec.retained,
        rec.parseval_norm, _l2(truth, grid), _l2(rec.field, grid), _l2(rec.field - truth, grid), samples.path,
    )


def pde_samples(pair: PotentialPair, cfg: ExperimentConfig, workers: int = 1) -> FourierSampleGrid:
    """PDE-path samples on the small lattice |xi'| <= recover.pde_xi_max, |k| <= recover.pde_k_max."""
    D = pair.difference
    sigma = max(cfg.sigmas())
    if pair.identical:
        return recover(pair, cfg.grid(), cfg["recover.pde_xi_max"], cfg["recover.pde_k_max"]).samples
    grid = cfg.probe_grid(sigma)
    xi2, xi3, ks = lattice(D.support_radius, cfg["recover.pde_xi_max"], cfg["recover.pde_k_max"])
    part = Window()
    tasks = []
    for a, b, k in zip(xi2, xi3, ks):
        om = direction_for((a, b))
        j, _ = choose_j(om)
        for m in window_sweep(D.support_radius, part):
            spec = ProbeSpec(om, sigma, cfg["fibers.theta"][0], cfg["time.T"], cfg.enclosing_radius(), (a, b), int(k), j, m, part)
            tasks.append((pair, spec, grid))
    records = _map(_pair_task, tasks, workers)
    values = []
    ids = []
    for a, b, k in zip(xi2, xi3, ks):
        recs = [r for r in records if r.xi == (float(a), float(b)) and r.k == int(k)]
        values.append(extract_beta_hat(recs) if not pair.identical else 0j)
        ids.append(f"pde:{a:.6g},{b:.6g},{k}@sigma={sigma:g}")
    return FourierSampleGrid(D.support_radius, xi2, xi3, ks, np.array(values, dtype=complex), "pde", ids)


def _pair_task(args):
    pair, spec, grid = args
    return dn_pair(pair, spec, grid)


def run_recover(cfg: ExperimentConfig, workers: int = 1) -> RecoveryResult:
    pair = cfg.pair()
    grid = cfg.grid()
    gamma = cfg["recover.gamma"] or None
    if cfg["recover.path"] == "pde":
        samples = pde_samples(pair, cfg, workers)
        return recover(pair, grid, 0.0, 0, gamma, cfg["recover.mass"], workers, samples=samples)
    return recover(pair, grid, cfg["probes.xi_max"], cfg["probes.k_max"], gamma, cfg["recover.mass"], workers)


# ----------------------------------------------------------------------
# stability
# ----------------------------------------------------------------------
STABILITY_COLUMNS = (
    "eps", "delta", "gamma", "sigma", "gamma_capped", "sigma_capped",
    "true_norm", "rec_norm", "rec_error", "norm", "slope",
)

# the trace norm is an infimum over lifts; the table uses the H^2(H^2) norm
# of the canonical GO lift instead and says so in the "norm" column
SURROGATE = "go_lift_h2h2"


def stability_battery(cfg: ExperimentConfig, grid: WaveguideGrid) -> list:
    """Broad GO lifts in ``stability.battery`` directions at ``stability.sigma``."""
    lifts = []
    n = cfg["stability.battery"]
    for i in range(n):
        ang = cfg["probes.omega_angle"] + 2 * np.pi * i / max(n, 1)
        om = (float(np.cos(ang)), float(np.sin(ang)))
        probe = BroadProbe(om, cfg["stability.sigma"], cfg["fibers.theta"][0], cfg["time.T"], cfg.enclosing_radius(), cfg["probes.profile_radius"])
        lifts.append(go_lift(broad_components(probe), grid, None, side=2))
    return lifts


def stability_experiment(cfg: ExperimentConfig, workers: int = 1) -> list[tuple]:
    """Table of (eps, delta, gamma, sigma, caps, norms, errors) for the family A1 + eps B.

    gamma = c_gamma delta^(-2/45) capped at ``stability.gamma_max``;
    sigma = gamma^(15/2) capped by the probe resolution rule.  Extraction
    uses the oracle path.
    """
    A1, B = cfg.potential("A1"), cfg.potential("B")
    theta = cfg["fibers.theta"][0]
    grid = cfg.probe_grid(cfg["stability.sigma"])
    battery = stability_battery(cfg, grid)
    norms = [xtheta_norm_surrogate(l, grid, theta) for l in battery]
    sigma_cap = 2 * np.pi / 8 / cfg["geometry.h"]
    rows = []
    rec_grid = cfg.grid()
    for eps in cfg["potentials.eps"]:
        A2 = A1 + B.scaled(eps) if eps else A1
        pair = PotentialPair(A1, A2, name=f"eps={eps:g}")
        if eps == 0 or pair.identical:
            rows.append((eps, 0.0, None, None, False, False, 0.0, 0.0, 0.0, SURROGATE))
            continue
        delta = dn_norm_estimate(pair, theta, battery, grid, norms).value
        g_rule = cfg["stability.c_gamma"] * delta ** (-2.0 / 45.0)
        gamma = min(g_rule, cfg["stability.gamma_max"])
        s_rule = gamma ** 7.5
        sigma = min(s_rule, sigma_cap)
        xi_max = min(gamma, cfg["probes.xi_max"])
        k_max = min(int(np.floor(gamma)), cfg["probes.k_max"])
        res = recover(pair, rec_grid, xi_max, k_max, gamma, workers=workers)
        rows.append((eps, delta, gamma, sigma, g_rule > gamma, s_rule > sigma, res.true_norm, res.rec_norm, res.abs_error, SURROGATE))
    live = [r for r in rows if r[1] > 0 and r[8] > 0]
    slope = loglog_slope([r[1] for r in live], [r[8] for r in live])
    return [r + (slope,) for r in rows]
