import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magwave.dn import (
    PAIRING_COLUMNS,
    LateralTrace,
    PairingRecord,
    dn_apply_level,
    dn_norm_estimate,
    dn_pair,
    dn_response,
    spatial_h2_sq,
    write_pairings,
    xtheta_norm_surrogate,
)
from magwave.domain import WaveguideGrid, rectangle
from magwave.fields import GaugeFunction, PotentialPair, make_potential
from magwave.harness.experiments import gauge_trace_error, green_mismatch, ramp_lift
from magwave.pde import assemble_operator
from magwave.probes import ProbeSpec

THETA = 0.4


def grid(h=1 / 8, n1=4, T=0.5, n_t=40):
    return WaveguideGrid(rectangle(h=h), n1, T, n_t)


def test_one_sided_normal_derivative_is_exact_for_quadratics():
    g = grid()
    cs = g.cs
    X2, X3 = cs.mesh
    u = np.broadcast_to(X2**2 + 3 * X3, (g.n1,) + X2.shape).astype(complex)
    sides = cs.sides
    out = dn_apply_level(u, g)
    exact = 2 * sides.x2 * sides.normal[:, 0] + 3 * sides.normal[:, 1]
    np.testing.assert_allclose(out, np.broadcast_to(exact, out.shape), atol=1e-11)


def test_zero_data_gives_zero_trace():
    g = grid()
    op = assemble_operator(make_potential("bump"), THETA, g)

    class Zero:
        def values(self, t):
            return np.zeros(g.node_shape, dtype=complex)

    assert dn_response(op, Zero()).norm() == 0.0


def test_trace_inner_product_and_norm_agree():
    g = grid()
    rng = np.random.default_rng(0)
    v = rng.standard_normal((g.n_t + 1, g.n1, g.cs.sides.size)) + 0j
    tr = LateralTrace(g, v)
    assert tr.inner(tr).real == pytest.approx(tr.norm() ** 2, rel=1e-12)


def test_green_identity_converges_at_second_order():
    A = make_potential("bump")
    m8 = green_mismatch(A, THETA, grid(1 / 8, 4, 0.5, 40))
    m16 = green_mismatch(A, THETA, grid(1 / 16, 4, 0.5, 40))
    assert m16 < m8
    assert np.log2(m8 / m16) >= 1.8


def test_gauge_trace_invariance_converges():
    A = make_potential("bump")
    psi = GaugeFunction(_interior_gauge())
    e8 = gauge_trace_error(A, psi, THETA, grid(1 / 8))
    e16 = gauge_trace_error(A, psi, THETA, grid(1 / 16))
    assert e16 < e8 / 3


def _interior_gauge():
    from magwave.fields import Bump, Cos1

    return Cos1(1.0, 0.5, 0.0) * Bump((0.0, 0.0), 0.35, 0.5)


def test_gauge_that_moves_the_boundary_is_detected():
    from magwave.fields import Coord

    A = make_potential("bump")
    psi = GaugeFunction(_interior_gauge() + Coord(1) * 0.5)
    assert gauge_trace_error(A, psi, THETA, grid()) > 0.05


def test_battery_estimate_is_the_maximum_ratio():
    g = grid()
    A1 = make_potential("bump")
    pair = PotentialPair(A1, A1 + make_potential("constant_field").scaled(0.2))
    battery = [ramp_lift(g, THETA), ramp_lift(g, THETA, T=2 * g.T)]
    est = dn_norm_estimate(pair, THETA, battery, g)
    assert est.value == max(est.per_datum)
    assert len(est.per_datum) == 2 and min(est.per_datum) > 0
    with pytest.raises(ValueError):
        dn_norm_estimate(pair, THETA, [], g)


def test_identical_pair_has_zero_estimate():
    g = grid()
    A = make_potential("bump")
    est = dn_norm_estimate(PotentialPair(A, A), THETA, [ramp_lift(g, THETA)], g)
    assert est.value == 0.0


def test_estimate_grows_with_perturbation_size():
    g = grid()
    A1 = make_potential("bump")
    B = make_potential("constant_field")
    battery = [ramp_lift(g, THETA)]
    norms = [xtheta_norm_surrogate(battery[0], g, THETA)]
    deltas = [dn_norm_estimate(PotentialPair(A1, A1 + B.scaled(e)), THETA, battery, g, norms).value for e in (0.05, 0.1, 0.2)]
    assert deltas[0] < deltas[1] < deltas[2]


def test_surrogate_of_zero_lift_is_zero():
    g = grid()

    class Zero:
        def values(self, t):
            return np.zeros(g.node_shape, dtype=complex)

    assert xtheta_norm_surrogate(Zero(), g, THETA) == 0.0
    assert xtheta_norm_surrogate(None, g, THETA) == 0.0


def test_surrogate_of_static_datum_is_spatial_norm_times_root_t():
    g = grid()
    X1, X2, X3 = g.mesh
    G = np.exp(1j * THETA * X1) * (1 + X2 * X3)

    class Static:
        def values(self, t):
            return G

    expect = np.sqrt(spatial_h2_sq(G, g, THETA) * g.T)
    assert xtheta_norm_surrogate(Static(), g, THETA) == pytest.approx(expect, rel=1e-12)


def test_identical_pair_pairing_is_zero():
    g = WaveguideGrid(rectangle(h=1 / 8), 4, 0.8, 100)
    A = make_potential("bump")
    sp = ProbeSpec((1.0, 0.0), 5.0, THETA, 0.8, 0.76)
    assert dn_pair(PotentialPair(A, A), sp, g).value == 0


def test_pairing_record_csv(tmp_path):
    rec = PairingRecord(THETA, (1.0, 0.0), (0.0, 2.0), 1, 3, 6.5, 0.25 - 1.5j, "oracle")
    path = tmp_path / "p.csv"
    write_pairings([rec], path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == PAIRING_COLUMNS
    assert float(rows[1][8]) == 0.25 and float(rows[1][9]) == -1.5
    assert rows[1][-1] == "oracle"
    with pytest.raises(ValueError):
        PairingRecord(THETA, (1.0, 0.0), (0.0, 0.0), 0, 2, 5.0, complex(np.nan, 0), "pde")
    with pytest.raises(ValueError):
        PairingRecord(THETA, (1.0, 0.0), (0.0, 0.0), 0, 2, 5.0, 1j, "guess")


@given(c=st.complex_numbers(min_magnitude=1e-6, max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_surrogate_is_absolutely_homogeneous(c):
    g = grid(n_t=6)
    lift = ramp_lift(g, THETA)

    class Scaled:
        def values(self, t):
            return c * lift.values(t)

    base = xtheta_norm_surrogate(lift, g, THETA)
    assert xtheta_norm_surrogate(Scaled(), g, THETA) == pytest.approx(abs(c) * base, rel=1e-10)


def _broad_surrogate(sigma, h=1 / 32):
    from magwave.harness import parse_config
    from magwave.probes import BroadProbe, broad_components, go_lift

    cfg = parse_config(f"geometry.h = {h}\ngeometry.n1 = 4\nprobes.sigma = 5\nstability.sigma = 5")
    g = cfg.probe_grid(sigma)
    probe = BroadProbe(cfg.omega(), sigma, THETA, cfg["time.T"], cfg.enclosing_radius(), 0.5)
    return xtheta_norm_surrogate(go_lift(broad_components(probe), g, None, side=2), g, THETA)


@pytest.fixture(scope="module")
def surrogate_ratio():
    return _broad_surrogate(10.0) / _broad_surrogate(5.0)


def test_surrogate_grows_with_frequency(surrogate_ratio):
    assert surrogate_ratio > 2.0


@pytest.mark.xfail(strict=True, reason="profile derivatives dominate the surrogate at desk resolution; see decisions ledger")
def test_surrogate_doubling_ratio_matches_sigma_squared(surrogate_ratio):
    assert 4.0 <= surrogate_ratio <= 6.0
