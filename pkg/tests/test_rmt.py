import cmath
import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from icvspikes.errors import InputError, SingularityError
from icvspikes.rmt import (
    CalibrationCache, DiscreteMeasure, calibrate_threshold, companion_stieltjes_empirical, detect_spikes,
    estimate_spikes, loglog_factor, mp_density, mp_forward, psi_derivative, psi_forward, threshold,
)

ONE = DiscreteMeasure.point(1.0)


def mp_companion_point_mass(z, y, c=1.0):
    """Root of z s^2 c + (z + c - y c) s + 1 = 0 (companion MP transform for H = delta_c) with the right branch."""
    a, b = z * c, z + c - y * c
    disc = cmath.sqrt(b * b - 4 * a)
    roots = [(-b + disc) / (2 * a), (-b - disc) / (2 * a)]
    if abs(complex(z).imag) > 0:
        return max(roots, key=lambda s: s.imag)
    # real z outside the support: the root closest to -1/z
    return min(roots, key=lambda s: abs(s + 1 / z))


def wishart_eigs(p, m, rng, spikes=()):
    d = np.ones(p)
    d[: len(spikes)] = spikes
    x = rng.standard_normal((p, m)) * np.sqrt(d)[:, None]
    return np.sort(np.linalg.eigvalsh(x @ x.T / m))[::-1]


def test_psi_examples():
    H = DiscreteMeasure.from_values([0.3, 0.7, 1.2])
    assert psi_forward(5.0, 0.0, H) == 5.0
    assert psi_derivative(5.0, 0.0, H) == 1.0
    assert psi_forward(2.0, 0.25, ONE) == pytest.approx(2.5, abs=1e-15)
    assert psi_derivative(2.0, 0.25, ONE) == pytest.approx(0.75, abs=1e-15)
    assert psi_derivative(2.0, 1.0, ONE) == pytest.approx(0.0, abs=1e-15)


def test_psi_on_atom_is_singular():
    with pytest.raises(SingularityError):
        psi_forward(1.0, 0.5, ONE)


@given(st.floats(1.3, 20), st.floats(0.01, 3), st.lists(st.floats(0.05, 1.0), min_size=1, max_size=5))
def test_psi_derivative_matches_finite_difference(alpha, y, atoms):
    H = DiscreteMeasure.from_values(atoms)
    h = 1e-6
    fd = (psi_forward(alpha + h, y, H) - psi_forward(alpha - h, y, H)) / (2 * h)
    d = psi_derivative(alpha, y, H)
    assert fd == pytest.approx(d, rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("y", [0.25, 0.5, 1.0, 2.0])
def test_psi_increasing_above_bbp(y):
    alphas = np.linspace(1 + math.sqrt(y) + 1e-3, 30, 400)
    vals = [psi_forward(a, y, ONE) for a in alphas]
    assert np.all(np.diff(vals) > 0)


def test_companion_hand_fixture():
    lam = [10.0, 1.0, 1.0, 1.0]
    assert companion_stieltjes_empirical(lam, 4, 4, 10.0, exclude=[0]) == pytest.approx(-1 / 12, abs=1e-15)


def test_companion_first_term_vanishes_when_p_equals_m(rng):
    lam = np.sort(rng.uniform(0, 1, 6))[::-1]
    z = 2.5 + 0.1j
    assert companion_stieltjes_empirical(lam, 6, 6, z) == pytest.approx(np.sum(1 / (lam - z)) / 6, abs=1e-15)


def test_companion_matches_closed_form_for_wishart():
    lam = wishart_eigs(500, 500, np.random.default_rng(7))
    s = companion_stieltjes_empirical(lam, 500, 500, 5.0)
    ref = mp_companion_point_mass(5.0, 1.0).real
    assert s == pytest.approx(ref, rel=0.02)


def test_companion_poles():
    with pytest.raises(SingularityError):
        companion_stieltjes_empirical([2.0, 1.0], 2, 4, 1.0)
    with pytest.raises(SingularityError):
        companion_stieltjes_empirical([2.0, 1.0], 2, 4, 0.0)


def test_estimate_hand_fixtures():
    est = estimate_spikes([10.0, 1.0, 1.0, 1.0], 4, 4, 1)
    assert est.b[0] == pytest.approx(-1 / 12, abs=1e-15)
    assert est.alpha_hat[0] == pytest.approx(12.0, abs=1e-12)
    est = estimate_spikes([10.0, 1.0], 2, 4, 1)
    assert est.b[0] == pytest.approx(-0.05 - 1 / 36, abs=1e-15)
    assert est.alpha_hat[0] == pytest.approx(1 / (0.05 + 1 / 36), abs=1e-12)
    assert round(est.alpha_hat[0], 3) == 12.857


def test_estimate_invalid_spike_is_nan(caplog):
    # for a PSD spectrum b_1 <= (1 - m) / (m lambda_1); equality at m = 1 with a zero bulk
    est = estimate_spikes([2.0, 0.0, 0.0, 0.0], 4, 1, 1)
    assert est.b[0] >= 0
    assert np.isnan(est.alpha_hat[0]) and not est.valid[0]
    assert "inversion not applicable" in caplog.text


def test_estimate_rejects_bad_K():
    with pytest.raises(InputError):
        estimate_spikes([3.0, 2.0, 1.0], 3, 3, 3)
    with pytest.raises(InputError):
        estimate_spikes([3.0, 3.0, 1.0], 3, 3, 1)


def test_estimate_spiked_wishart_median():
    rng = np.random.default_rng(2024)
    est = [estimate_spikes(wishart_eigs(400, 400, rng, [4.0]), 400, 400, 1).alpha_hat[0] for _ in range(50)]
    assert np.median(est) == pytest.approx(4.0, rel=0.05)


def test_roundtrip_from_sampled_bulk():
    lam = wishart_eigs(400, 400, np.random.default_rng(8))
    alpha = 4.0
    lam[0] = psi_forward(alpha, 1.0, ONE)
    est = estimate_spikes(lam, 400, 400, 1)
    assert est.alpha_hat[0] == pytest.approx(alpha, rel=0.05)


def test_psi_check_diagnostic():
    est = estimate_spikes([10.0, 1.0, 1.0, 1.0], 4, 4, 1, H=ONE)
    assert est.psi_check[0] == pytest.approx(psi_forward(12.0, 1.0, ONE))


def test_loglog_factor():
    assert loglog_factor(100) == pytest.approx(math.sqrt(2 * math.log(math.log(100))))
    assert loglog_factor(10) == 1.0
    with pytest.raises(InputError):
        loglog_factor(2)
    assert threshold(2.0, 1000) == pytest.approx(2.0 * 1000 ** (-2 / 3) * loglog_factor(1000))


def test_detect_examples():
    d = detect_spikes([10.0, 1.0, 0.95, 0.9], 100, 0.5 / threshold(1.0, 100))
    assert d.threshold == pytest.approx(0.5)
    assert d.K_hat == 1
    d = detect_spikes(np.linspace(1, 0, 11), 100, 1.0 / threshold(1.0, 100))
    assert d.K_hat == 0


def test_detect_overflow():
    d = detect_spikes([100.0, 50.0, 10.0, 0.0], 100, 1e-9)
    assert d.K_hat == 3 and d.overflow


@given(st.lists(st.floats(0, 100), min_size=2, max_size=30), st.floats(1e-3, 1e3), st.floats(0.01, 5))
def test_detect_scale_covariant(vals, c, C):
    lam = np.sort(vals)[::-1]
    a = detect_spikes(lam, 50, C)
    b = detect_spikes(lam * c, 50, C, scale=c)
    spac = lam[:-1] - lam[1:]
    # skip ties with the threshold, where rounding of the product decides
    assume(np.all(np.abs(spac - a.threshold) > 1e-9 * max(1.0, a.threshold)))
    assert a.K_hat == b.K_hat


def test_calibration_deterministic_and_order_statistic():
    a = calibrate_threshold(40, 40, replications=50, seed=3)
    b = calibrate_threshold(40, 40, replications=50, seed=3)
    assert a == b
    assert a.order == 1 and a.C > 0
    with pytest.raises(InputError):
        calibrate_threshold(40, 40, replications=10)


def test_calibration_stable_across_seeds():
    a = calibrate_threshold(200, 200, replications=500, seed=1)
    b = calibrate_threshold(200, 200, replications=500, seed=2)
    assert a.order == 10
    da, db = threshold(a.C, 200), threshold(b.C, 200)
    assert abs(da - db) / min(da, db) < 0.20


def test_calibration_window_clipped_for_rank_deficient():
    cal = calibrate_threshold(60, 20, replications=20, seed=0)
    assert cal.window[1] <= 19


def test_calibration_cache(tmp_path):
    path = tmp_path / "cache.json"
    a = CalibrationCache(path).get(30, 30, 20, 5)
    b = CalibrationCache(path).get(30, 30, 20, 5)
    assert a == b and path.exists()


@pytest.mark.parametrize("x", [1.0, 2.0, 3.0])
def test_mp_density_closed_form(x):
    assert mp_density(ONE, 1.0, x) == pytest.approx(math.sqrt(4 * x - x * x) / (2 * math.pi * x), abs=1e-3)


@pytest.mark.parametrize("y", [0.3, 1.0, 2.5])
@pytest.mark.parametrize("z", [0.5 + 0.5j, 2.0 + 1e-3j, 7.0 + 0.01j, -1.0 + 0.2j])
def test_mp_forward_matches_quadratic_root(y, z):
    assert mp_forward(ONE, y, z) == pytest.approx(mp_companion_point_mass(z, y), abs=1e-6)


def test_mp_forward_small_y():
    z = 2.0 + 0.5j
    assert mp_forward(DiscreteMeasure.from_values([0.5, 1.5]), 1e-8, z) == pytest.approx(-1 / z, abs=1e-6)


@pytest.mark.parametrize("c,y", [(1.0, 0.25), (2.0, 0.5)])
def test_mp_forward_support_edges(c, y):
    lo, hi = c * (1 - math.sqrt(y)) ** 2, c * (1 + math.sqrt(y)) ** 2
    H = DiscreteMeasure.point(c)
    assert mp_density(H, y, hi * 1.05) < 1e-4
    assert mp_density(H, y, lo * 0.95) < 1e-4
    assert mp_density(H, y, 0.5 * (lo + hi)) > 0.05


def test_mp_forward_rejects_real_axis():
    with pytest.raises(InputError):
        mp_forward(ONE, 1.0, 2.0)


@pytest.mark.parametrize("alpha,y", [(3.0, 0.5), (2.5, 1.0), (6.0, 2.0)])
def test_duality_two_point_population(alpha, y):
    H = DiscreteMeasure.from_values([0.5, 1.0])
    assert psi_derivative(alpha, y, H) > 0
    s = mp_forward(H, y, psi_forward(alpha, y, H) + 1e-6j)
    assert abs(alpha * s + 1) < 1e-3
