import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from magwave.domain import WaveguideGrid, rectangle
from magwave.fields import Const, MagneticPotential, ZERO_POTENTIAL, make_potential
from magwave.pde import discrete_residual, assemble_operator
from magwave.probes import (
    BroadProbe,
    GOComponents,
    ProbeError,
    ProbeSpec,
    ResolutionError,
    RoundProfile,
    Window,
    broad_components,
    build_amplitude,
    check_resolution,
    go_boundary_data,
    go_lift,
    go_remainder,
    window_components,
    n_omega_norm,
    profile_h,
)

T = 0.8
CS = rectangle(h=1 / 8)
R = CS.enclosing_radius + 0.05
OMEGA = (float(np.cos(0.3)), float(np.sin(0.3)))


def small_grid(sigma=5.0, n1=4):
    n_t = int(np.ceil(T / (0.2 / sigma**2)))
    return WaveguideGrid(CS, n1, T, n_t)


def spec(**kw):
    base = dict(omega=OMEGA, sigma=5.0, theta=0.4, T=T, R=R, k=0, j=3, window=1)
    base.update(kw)
    return ProbeSpec(**base)


def test_profile_h_is_normalised():
    val, _ = integrate.quad(lambda s: profile_h(s)[0] ** 2, 0, 1 / 8, epsabs=1e-13, epsrel=1e-13, limit=200)
    assert val == pytest.approx(1.0, abs=1e-12)
    assert profile_h(-0.01)[0] == 0.0 and profile_h(0.13)[0] == 0.0


def test_profile_h_derivative():
    s = np.linspace(0.01, 0.115, 15)
    step = 1e-6
    fd = (profile_h(s + step)[0] - profile_h(s - step)[0]) / (2 * step)
    np.testing.assert_allclose(profile_h(s)[1], fd, rtol=1e-6, atol=1e-4)


def test_window_partition_sums_to_one():
    w = Window()
    tau = np.linspace(-1, 1, 501)
    total = sum(w.beta0(m, tau) for m in range(-12, 13))
    np.testing.assert_allclose(total, 1.0, atol=1e-13)


def test_zero_potential_amplitude_is_one():
    b = build_amplitude(ZERO_POTENTIAL, OMEGA)
    assert np.all(b(np.array([0.0, 1.0]), 0.2, 0.1, 0.3) == 1.0)


def test_amplitude_has_unit_modulus_and_transport():
    A = make_potential("bump")
    b = build_amplitude(A, OMEGA, panels=32)
    rng = np.random.default_rng(0)
    n = 200
    t = rng.uniform(0.1, 1.5, n)
    x1 = rng.uniform(0, 1, n)
    x2, x3 = rng.uniform(-0.6, 0.6, (2, n))
    assert np.abs(np.abs(b(t, x1, x2, x3)) - 1).max() <= 1e-13
    step = 1e-4
    om = np.array(OMEGA)
    dt = (b(t + step, x1, x2, x3) - b(t - step, x1, x2, x3)) / (2 * step)
    dx = (b(t, x1, x2 + step * om[0], x3 + step * om[1]) - b(t, x1, x2 - step * om[0], x3 - step * om[1])) / (2 * step)
    a = om[0] * A.a2(x1, x2, x3) + om[1] * A.a3(x1, x2, x3)
    assert np.abs(dt + dx + 1j * a * b(t, x1, x2, x3)).max() <= 1e-6


def test_amplitude_off_support_ray():
    A = make_potential("bump")
    b = build_amplitude(A, (1.0, 0.0))
    # the ray x3 = 0.6 never meets the support disk of radius 0.35
    assert np.all(b(np.linspace(0, 3, 7), 0.3, 0.2, 0.6) == 1.0)


def test_probe_spec_validation():
    with pytest.raises(ProbeError):
        spec(omega=(1.0, 1.0))
    with pytest.raises(ProbeError):
        spec(j=1)
    with pytest.raises(ProbeError):
        spec(xi=(1.0, 1.0))
    with pytest.raises(ProbeError):
        spec(sigma=4.0)
    with pytest.raises(ProbeError):
        spec(window=20)


def test_probe_geometry():
    sp_ = spec()
    assert sp_.sigma0 == pytest.approx(2 * (R + 1) / T)
    assert sp_.r == pytest.approx(np.sqrt((R + 0.75) ** 2 - sp_.z0_coord**2))
    z1 = sp_.z1
    assert np.hypot(*z1) - 0.25 >= R - 1e-12
    assert float(np.dot(z1, OMEGA)) + 0.25 <= 1e-12


def test_window_phase_is_trivial_without_field():
    comp = window_components(spec(theta=0.0), ZERO_POTENTIAL)
    x = np.random.default_rng(1).uniform(-1, 1, (3, 30))
    assert np.all(comp.phi_theta(*x) == 1.0)


def test_window_support_lies_in_incoming_half_plane():
    A = make_potential("bump")
    sp_ = spec(xi=tuple(12.0 * np.array([-OMEGA[1], OMEGA[0]])))
    comp = window_components(sp_, A)
    g = np.linspace(-2, 2, 401)
    Y2, Y3 = np.meshgrid(g, g, indexing="ij")
    v = np.abs(comp.phi0(Y2, Y3))
    nz = v > 0
    assert nz.any()
    assert (Y2[nz] * OMEGA[0] + Y3[nz] * OMEGA[1]).max() < 0
    assert np.hypot(Y2[nz] - sp_.z1[0], Y3[nz] - sp_.z1[1]).max() < 0.25


def test_profile_transport_and_phase_modulus():
    comp = window_components(spec(), make_potential("bump"))
    rng = np.random.default_rng(2)
    t = rng.uniform(0.5, 1.5, 50)
    x1 = rng.uniform(0, 1, 50)
    x2, x3 = rng.uniform(-1.5, 1.5, (2, 50))
    step = 1e-6
    om = np.array(OMEGA)
    dt = (comp.Phi(t + step, x1, x2, x3) - comp.Phi(t - step, x1, x2, x3)) / (2 * step)
    dx = (comp.Phi(t, x1, x2 + step * om[0], x3 + step * om[1]) - comp.Phi(t, x1, x2 - step * om[0], x3 - step * om[1])) / (2 * step)
    assert np.abs(dt + dx).max() <= 1e-6 * max(1.0, np.abs(comp.Phi(t, x1, x2, x3)).max())
    assert np.abs(np.abs(comp.E_sigma(t, x2, x3)) - 1).max() <= 1e-13


class _Zero(RoundProfile):
    def __call__(self, y2, y3):
        z = np.zeros(np.broadcast(y2, y3).shape, dtype=complex)
        return z, z, z


def test_n_norm_of_zero_profile():
    probe = BroadProbe(OMEGA, 5.0, 0.0, T, R)
    comp = GOComponents(probe, ZERO_POTENTIAL, _Zero(probe.center, 0.5))
    assert n_omega_norm(comp) == 0.0


def test_n_norm_scaling_of_rescaled_bump():
    probe = BroadProbe(OMEGA, 5.0, 0.0, T, R)
    orders = []
    for lam in (1.0, 0.5):
        comp = GOComponents(probe, ZERO_POTENTIAL, RoundProfile(probe.center, 0.5 * lam))
        _, o = n_omega_norm(comp, n1=4, n_box=128, parts=True)
        orders.append(o)
    # squared seminorms of order 0, 1, 2 scale like lam^2, lam^0, lam^-2
    ratios = [orders[1][i] / orders[0][i] for i in range(3)]
    np.testing.assert_allclose(ratios, [0.25, 1.0, 4.0], rtol=1e-6)


def test_n_norm_grows_with_modulation():
    pp = np.array([-OMEGA[1], OMEGA[0]])
    plain = n_omega_norm(window_components(spec(), ZERO_POTENTIAL), n1=4)
    mod = n_omega_norm(window_components(spec(xi=tuple(20.0 * pp)), ZERO_POTENTIAL), n1=4)
    assert mod >= plain


def test_boundary_data_vanishes_at_both_ends():
    g = small_grid()
    comp = window_components(spec(), make_potential("bump"))
    trace, _ = go_boundary_data(comp, g, make_potential("bump"))
    assert np.abs(trace[0]).max() == 0.0
    assert np.abs(trace[-1]).max() == 0.0
    assert np.abs(trace).max() > 0.0
    # modulus factorisation: |trace| <= sup |phi0|
    s = np.linspace(-2, 2, 801)
    Y2, Y3 = np.meshgrid(s, s, indexing="ij")
    sup = np.abs(comp.phi0(Y2, Y3)).max()
    assert np.abs(trace).max() <= sup * (1 + 1e-3)


def test_resolution_rule():
    with pytest.raises(ResolutionError):
        check_resolution(10.0, small_grid(5.0))
    with pytest.raises(ResolutionError):
        check_resolution(5.0, WaveguideGrid(CS, 4, T, 10))


@pytest.mark.parametrize("side", [2, 1])
def test_remainder_initialisation_and_exactness(side):
    g = small_grid()
    A = make_potential("bump")
    comp = window_components(spec(), A)
    res = go_remainder(A, comp, g, side=side, keep_field=True, n_norm=1.0)
    psi = res.psi.values
    edge = 0 if side == 2 else -1
    assert np.abs(psi[edge]).max() == 0.0
    lift = go_lift(comp, g, A, side)
    u = psi + np.stack([lift.values(t) for t in g.t])
    from magwave.pde import FiberField

    op = assemble_operator(A, 0.4, g)
    N = n_omega_norm(comp, n1=4)
    assert discrete_residual(op, FiberField(g, 0.4, u)).max() <= 1e-6 * N
    assert res.source_l1 > 0


def test_remainder_with_explicit_zero_potential_matches_free_run():
    g = small_grid()
    probe = BroadProbe(OMEGA, 5.0, 0.4, T, R)
    free = go_remainder(None, broad_components(probe), g, n_norm=1.0)
    zero = MagneticPotential(Const(0.0), Const(0.0), Const(0.0), support_radius=0.0)
    again = go_remainder(zero, broad_components(probe, zero), g, n_norm=1.0)
    assert abs(free.psi_l2 - again.psi_l2) <= 1e-8 * free.psi_l2
    assert abs(free.grad_psi_l2 - again.grad_psi_l2) <= 1e-8 * free.grad_psi_l2


@given(angle=st.floats(0, 2 * np.pi), window=st.integers(-3, 3))
def test_every_valid_spec_satisfies_support_invariants(angle, window):
    om = (float(np.cos(angle)), float(np.sin(angle)))
    try:
        sp_ = ProbeSpec(om, 5.0, 0.4, T, R, window=window)
    except ProbeError:
        return
    comp = window_components(sp_, ZERO_POTENTIAL)
    a = np.linspace(-0.25, 0.25, 41)
    Y2 = sp_.z1[0] + a[:, None]
    Y3 = sp_.z1[1] + a[None, :]
    nz = np.abs(comp.phi0(Y2, Y3)) > 0
    if nz.any():
        Y2b, Y3b = np.broadcast_arrays(Y2, Y3)
        assert (Y2b[nz] * om[0] + Y3b[nz] * om[1]).max() < 0
        # the support of phi0 never meets the cross-section
        assert not CS.contains(Y2b[nz], Y3b[nz]).any()
