import numpy as np
import pytest
from hypothesis import given, strategies as st

from icvspikes.errors import InputError, NumericalError
from icvspikes.preavg import (
    PreAvgConfig, block_diffs, parcov, parcov_from_diffs, parcov_overlapping, psi2, triangular_weights,
)
from icvspikes.sim import GammaConfig, SimConfig, SpikedSigmaSpec, simulate_panel


def triangular_sum(panel, k):
    """Direct loop over the triangular-weighted increments around each block boundary."""
    inc = np.diff(panel, axis=0)  # inc[l - 1] = V_l - V_{l-1}
    m = (panel.shape[0] - 1) // (2 * k)
    out = np.zeros((m, panel.shape[1]))
    for i in range(1, m + 1):
        centre = (2 * i - 1) * k
        for j in range(-(k - 1), k):
            out[i - 1] += (1 - abs(j) / k) * inc[centre + j - 1]
    return out


@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 40), st.integers(0, 2**31))
def test_block_diffs_equal_triangular_increment_sum(k, p, extra, seed):
    n = 2 * k * 3 + extra
    v = np.random.default_rng(seed).standard_normal((n + 1, p)).cumsum(axis=0)
    np.testing.assert_allclose(block_diffs(v, k), triangular_sum(v, k), atol=1e-12)


def test_triangular_weights():
    assert triangular_weights(3).tolist() == pytest.approx([1 / 3, 2 / 3, 1.0, 2 / 3, 1 / 3])


def test_k1_is_plain_increments(rng):
    v = rng.standard_normal((11, 2))
    np.testing.assert_array_equal(block_diffs(v, 1), v[1::2][:5] - v[0::2][:5])


def test_constant_panel_has_zero_diffs_and_fails():
    v = np.ones((21, 3))
    assert not block_diffs(v, 2).any()
    with pytest.raises(NumericalError):
        parcov(v, PreAvgConfig(k=2))


def test_single_block_is_scaled_outer_product(rng):
    d = rng.standard_normal((1, 4))
    res = parcov_from_diffs(d)
    np.testing.assert_allclose(res.matrix, 3 * np.outer(d[0], d[0]), rtol=0, atol=1e-12 * np.abs(d).max() ** 2)


@given(st.integers(1, 12), st.integers(1, 30), st.integers(0, 2**31))
def test_trace_is_three_m_mean_sq_norm(p, m, seed):
    d = np.random.default_rng(seed).standard_normal((m, p))
    res = parcov_from_diffs(d)
    assert np.trace(res.matrix) == pytest.approx(3 * res.m * res.mean_sq_norm, rel=1e-8)


def test_permutation_equivariance(rng):
    v = rng.standard_normal((201, 5)).cumsum(axis=0)
    perm = rng.permutation(5)
    a = parcov(v, PreAvgConfig(k=4)).matrix
    b = parcov(v[:, perm], PreAvgConfig(k=4)).matrix
    np.testing.assert_allclose(b, a[np.ix_(perm, perm)], atol=1e-14)


def test_psd(rng):
    d = rng.standard_normal((5, 20))  # m < p: rank deficient
    res = parcov_from_diffs(d)
    w = np.linalg.eigvalsh(res.matrix)
    assert w.min() >= -1e-10 * np.abs(w).max()
    assert res.eigenvalues.min() >= 0


def test_zero_blocks_are_skipped(rng, caplog):
    d = rng.standard_normal((4, 3))
    d[1] = 0
    res = parcov_from_diffs(d)
    assert (res.m, res.skipped) == (3, 1)
    assert "skipping" in caplog.text


def test_window_rule_and_tail_discard(rng):
    cfg = PreAvgConfig(theta=0.1, exponent=2 / 3)
    assert cfg.window(8000) == 40
    v = rng.standard_normal((8000 + 1 + 17, 2))
    res = parcov(v, PreAvgConfig(k=40))
    assert res.m == (8000 + 17) // 80


def test_bad_window():
    with pytest.raises(InputError):
        PreAvgConfig(k=0)
    with pytest.raises(InputError):
        block_diffs(np.zeros((5, 1)), 3)


def test_consistent_for_constant_volatility_identity():
    # ICV = c^2 I with p=5, m=2000, no noise: eigenvalues average close to c^2
    c = 0.3
    n, k = 40000, 10
    cfg = SimConfig(p=5, n=n, k=k, sigma_spec=SpikedSigmaSpec((), 5, ("constant", 1.0)),
                    gamma=GammaConfig(rho=0.0, sigma=0.0, gamma0=c), noise_var=0.0)
    out = simulate_panel(cfg, np.random.default_rng(3))
    res = parcov(out.observed, PreAvgConfig(k=k))
    assert res.m == 2000
    assert res.eigenvalues.mean() == pytest.approx(c**2, rel=0.10)


def test_overlapping_hand_arithmetic():
    # kn = 2: only g(1/2) = 1/2 weights a single increment, psi2 = 1/8
    assert psi2(2) == pytest.approx(1 / 8)
    v = np.array([[0.0], [1.0], [3.0], [6.0], [10.0]])  # increments 1, 2, 3, 4
    n = 4
    res = parcov_overlapping(v, theta=1.0)  # floor(1 * sqrt(4)) = 2
    bars = 0.5 * np.array([1.0, 2.0, 3.0, 4.0])
    expected = (n / (n - 2 + 2)) / (psi2(2) * 2) * np.sum(bars**2)
    assert res.k == 2 and res.m == 4
    assert res.matrix[0, 0] == pytest.approx(expected, rel=1e-14)


def test_psi2_limit():
    assert psi2(20000) == pytest.approx(1 / 12, rel=1e-4)


def test_overlapping_constant_panel_is_zero():
    assert not parcov_overlapping(np.ones((101, 3)), theta=0.5).matrix.any()
