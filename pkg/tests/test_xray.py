import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from magwave.fields import PotentialPair, beta, make_potential
from magwave.harness.experiments import truth_norm_sq
from magwave.probes import ProbeSpec
from magwave.xray import (
    PAIRING_FACTOR,
    FourierSampleGrid,
    beta_hat_direct,
    bracket,
    choose_j,
    direction_for,
    extract_beta_hat,
    fourier_slice_check,
    lattice,
    oracle_grid,
    oracle_sample,
    pairing_oracle,
    pairing_oracle_reduced,
    partition_defect,
    reconstruct_beta23,
    rho_j,
    telescope_check,
    window_sweep,
    xray_lines,
    xray_transform,
)

A = make_potential("bump")
RS = A.support_radius
T = 0.8
R = 0.76


def test_xray_of_radial_bump_matches_quadrature():
    from magwave.fields import Bump

    f = Bump((0.05, -0.02), 0.3, 1.0)
    om = (0.6, 0.8)
    for xp in [(0.0, 0.0), (0.1, -0.05), (0.5, 0.5)]:
        ref, _ = integrate.quad(lambda s: f(0.3, xp[0] + s * om[0], xp[1] + s * om[1]), -2, 2, epsabs=1e-12, limit=200)
        assert xray_transform(f, om, 0.3, xp) == pytest.approx(ref, abs=1e-9)


def test_vectorised_lines_agree_with_scalar():
    om = np.array([np.cos(1.1), np.sin(1.1)])
    y2 = np.array([0.0, 0.1, -0.2])
    y3 = np.array([0.05, -0.1, 0.15])
    vec = xray_lines(A.a2, om, 0.4, y2, y3, RS, panels=32)
    ref = [xray_transform(A.a2, om, 0.4, (a, b), RS) for a, b in zip(y2, y3)]
    np.testing.assert_allclose(vec, ref, atol=1e-9)


def test_line_missing_the_support_is_zero():
    assert xray_transform(A.a2, (1.0, 0.0), 0.2, (0.0, 0.9), RS) == 0.0


def test_fourier_slice_identity():
    for ang, eta in [(0.3, 5.0), (2.0, -11.0), (4.0, 0.0)]:
        lhs, rhs = fourier_slice_check(A.a3, RS, (np.cos(ang), np.sin(ang)), eta, 0.7)
        assert abs(lhs - rhs) <= 1e-8


def test_telescope_identity():
    for ang in (0.2, 1.9, 3.5):
        om = np.array([np.cos(ang), np.sin(ang)])
        lhs, rhs = telescope_check(A, om, 6.0, T, 0.3, -0.8 * om + 0.1 * np.array([-om[1], om[0]]))
        assert abs(lhs - rhs) <= 1e-8


def test_rho_slice_relation():
    """Transform of rho_j on xi' perpendicular to omega' is a multiple of beta23's."""
    om = np.array([np.cos(0.7), np.sin(0.7)])
    pp = np.array([-om[1], om[0]])
    eta, x1 = 9.0, 0.35
    x = np.linspace(-RS, RS, 257)
    w = np.full(x.size, x[1] - x[0])
    w[[0, -1]] *= 0.5
    X2, X3 = np.meshgrid(x, x, indexing="ij")
    ph = np.exp(-1j * eta * (X2 * pp[0] + X3 * pp[1])) * np.outer(w, w) / (2 * np.pi)
    b_hat = np.sum(beta(A, 2, 3)(x1, X2, X3) * ph)
    for j, factor in ((2, -om[1]), (3, om[0])):
        r_hat = np.sum(rho_j(A, om, j)(x1, X2, X3) * ph)
        assert abs(r_hat - factor * b_hat) <= 1e-8 * max(1.0, abs(b_hat))
    with pytest.raises(ValueError):
        rho_j(A, om, 1)


def test_direction_and_divisor():
    for xi in [(3.0, 4.0), (-1.0, 0.0), (0.0, 0.0)]:
        om = direction_for(xi)
        assert np.hypot(*om) == pytest.approx(1.0)
        assert abs(np.dot(om, xi)) <= 1e-12
        _, d = choose_j(om)
        assert abs(d) >= 2**-0.5 - 1e-12


def test_partition_covers_the_support():
    assert partition_defect(RS) <= 1e-12
    sweep = window_sweep(RS)
    assert sweep == sorted(sweep) and len(sweep) >= 5


def test_oracle_matches_reduced_form():
    om = direction_for((0.0, 9.0))
    j, _ = choose_j(om)
    pair = PotentialPair(make_potential("zero"), A)
    for m in (-1, 0, 2):
        spec = ProbeSpec(om, 6.5, 0.4, T, R, (0.0, 9.0), 1, j, m)
        full = pairing_oracle(spec, pair).value
        red = pairing_oracle_reduced(spec, pair)
        assert abs(full - PAIRING_FACTOR * red) <= 1e-6 * max(abs(full), 1e-3)


def test_window_sweep_extraction_matches_direct_transform():
    pair = PotentialPair(make_potential("zero"), A)
    xi = (2 * np.pi / RS * 0.5, np.pi / RS)
    om = direction_for(xi)
    j, _ = choose_j(om)
    recs = [pairing_oracle(ProbeSpec(om, 6.5, 0.4, T, R, xi, 0, j, m), pair, n_tau=160) for m in window_sweep(RS)]
    b = extract_beta_hat(recs)
    assert abs(b - beta_hat_direct(A, xi[0], xi[1], 0)[0]) <= 1e-6
    assert abs(b - oracle_sample(pair, xi, 0)) <= 1e-6


def test_extraction_rejects_mixed_records():
    pair = PotentialPair(make_potential("zero"), A)
    om = direction_for((0.0, 5.0))
    j, _ = choose_j(om)
    r1 = pairing_oracle(ProbeSpec(om, 6.5, 0.4, T, R, (0.0, 5.0), 0, j, 0), pair, n1=8, n_s=32, n_tau=32)
    r2 = pairing_oracle(ProbeSpec(om, 6.5, 0.4, T, R, (0.0, 5.0), 1, j, 0), pair, n1=8, n_s=32, n_tau=32)
    with pytest.raises(ValueError):
        extract_beta_hat([r1, r2])
    with pytest.raises(ValueError):
        extract_beta_hat([])


@settings(max_examples=10)
@given(p=st.integers(-4, 4), q=st.integers(-4, 4), k=st.integers(-1, 1))
def test_oracle_samples_agree_with_direct_transform(p, q, k):
    d = np.pi / RS
    xi = (p * d, q * d)
    assert abs(oracle_sample(A, xi, k) - beta_hat_direct(A, xi[0], xi[1], k)[0]) <= 1e-6


@settings(max_examples=10)
@given(p=st.integers(-4, 4), q=st.integers(-4, 4), k=st.integers(-1, 1))
def test_samples_are_hermitian(p, q, k):
    d = np.pi / RS
    a = oracle_sample(A, (p * d, q * d), k)
    b = oracle_sample(A, (-p * d, -q * d), -k)
    assert abs(a - np.conj(b)) <= 1e-9


def test_zero_frequency_sample_vanishes():
    for k in (-1, 0, 1):
        assert abs(oracle_sample(A, (0.0, 0.0), k)) <= 1e-10
        assert abs(beta_hat_direct(A, 0.0, 0.0, k)[0]) <= 1e-10


def test_lattice_parseval():
    truth = truth_norm_sq(A)
    missing = []
    for xi_max in (60.0, 130.0):
        g = _direct_grid(xi_max)
        assert g.hermitian_defect() <= 1e-10
        missing.append(truth - g.parseval_sum())
    # the tail beyond the cutoff carries the missing mass, which shrinks as it grows
    assert 0 <= missing[1] < missing[0]
    assert missing[1] <= 5e-3 * truth


def test_oracle_grid_is_hermitian_by_construction():
    g = oracle_grid(A, 12.0, 1, n_tau=64)
    assert g.hermitian_defect() == 0.0
    assert len(g.probe_ids) == g.values.size


def _direct_grid(xi_max):
    xi2, xi3, k = lattice(RS, xi_max, 1)
    return FourierSampleGrid(RS, xi2, xi3, k, beta_hat_direct(A, xi2, xi3, k))


def _box_error(rec):
    X1, X2, X3 = np.meshgrid(rec.x1, rec.x2, rec.x3, indexing="ij")
    return np.sqrt(np.mean((rec.field - beta(A, 2, 3)(X1, X2, X3)) ** 2))


def test_empty_cutoff_gives_zero_field(caplog):
    g = _direct_grid(20.0)
    x = np.linspace(-RS, RS, 9)
    with caplog.at_level(logging.WARNING):
        rec = reconstruct_beta23(g, 0.5, np.arange(4) / 4, x, x)
    assert rec.retained == 0 and not rec.field.any()
    assert rec.warning and "no lattice samples" in caplog.text


def test_reconstruction_error_does_not_grow_with_cutoff():
    g = _direct_grid(100.0)
    x1 = np.arange(8) / 8
    x = np.linspace(-RS, RS, 29)
    errs = [_box_error(reconstruct_beta23(g, gamma, x1, x, x)) for gamma in (12.5, 25.0, 50.0, 100.0)]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 0.1 * errs[0]


def test_bracket():
    assert bracket(0.0, 0.0, 0) == 1.0
    assert bracket(3.0, 4.0, 0) == pytest.approx(np.sqrt(26.0))
    assert bracket(0.0, 0.0, -2) == pytest.approx(np.sqrt(5.0))
