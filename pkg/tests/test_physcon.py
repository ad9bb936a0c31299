import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csirobust.autograd import Tensor
from csirobust.physcon import (PhysConfig, PhysicalProjector, estimate_rx_cov, freq_corr_matrix,
                               gaussian_kernel, mmd_rbf, mmd_rbf_tensor, project_phys,
                               rescale_to, rx_cholesky, spatial_correlate, subcarrier_grid,
                               temporal_smooth)


# ------------------------------------------------------------ frequency correlation

@pytest.mark.parametrize("kind", ["gaussian", "exponential"])
@pytest.mark.parametrize("k", [1, 30, 114])
def test_corr_matrix_properties(kind, k):
    C = freq_corr_matrix(subcarrier_grid(k, 312.5e3), 50e-9, kind)
    np.testing.assert_array_equal(C, C.T)
    np.testing.assert_allclose(np.diag(C), 1.0, rtol=0, atol=1e-15)
    assert C.min() > 0 and C.max() <= 1.0
    assert np.linalg.eigvalsh(C).min() >= -1e-10
    # Toeplitz and non-increasing away from the diagonal
    if k > 2:
        np.testing.assert_allclose(np.diag(C, 1), C[0, 1])
        assert np.all(np.diff(C[0]) <= 1e-15)


def test_gaussian_corr_at_unit_argument():
    tau = 50e-9
    df = 1.0 / (2 * np.pi * tau)
    C = freq_corr_matrix(np.array([0.0, df]), tau, "gaussian")
    assert C[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-12)
    Ce = freq_corr_matrix(np.array([0.0, df]), tau, "exponential")
    assert Ce[0, 1] == pytest.approx(1 / np.sqrt(2.0), rel=1e-12)


def test_zero_delay_spread_gives_all_ones():
    np.testing.assert_array_equal(freq_corr_matrix(subcarrier_grid(5, 1e5), 0.0), np.ones((5, 5)))


def test_non_increasing_frequencies_rejected():
    with pytest.raises(ValueError):
        freq_corr_matrix(np.array([0.0, 2.0, 1.0]), 50e-9)


# ------------------------------------------------------------ temporal smoothing

def test_smoothing_zero_sigma_is_identity(rng):
    d = rng.standard_normal((2, 3, 20))
    np.testing.assert_array_equal(temporal_smooth(d, 0.0), d)


def test_smoothing_preserves_constant_rows():
    d = np.full((2, 3, 25), 1.7)
    np.testing.assert_allclose(temporal_smooth(d, 3.0), d, rtol=1e-14)


def test_impulse_center_weight():
    x = np.zeros((1, 1, 21))
    x[0, 0, 10] = 1.0
    out = temporal_smooth(x, 1.0)
    expected = 1.0 / (1 + 2 * np.exp(-0.5) + 2 * np.exp(-2.0) + 2 * np.exp(-4.5))
    assert out[0, 0, 10] == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.39905, abs=1e-5)
    assert gaussian_kernel(1.0).size == 7


@given(arrays(np.float64, (2, 2, 17), elements=st.floats(-10, 10)),
       arrays(np.float64, (2, 2, 17), elements=st.floats(-10, 10)),
       st.floats(-3, 3), st.floats(-3, 3), st.floats(0.3, 4.0))
def test_smoothing_is_linear(d1, d2, a, b, sigma):
    lhs = temporal_smooth(a * d1 + b * d2, sigma)
    rhs = a * temporal_smooth(d1, sigma) + b * temporal_smooth(d2, sigma)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, np.abs(lhs).max()))


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        temporal_smooth(np.zeros((1, 1, 3)), -1.0)


# ------------------------------------------------------------ spatial correlation

def test_identity_covariance_is_identity(rng):
    d = rng.standard_normal((3, 4, 5))
    np.testing.assert_allclose(spatial_correlate(d, np.eye(3)), d, rtol=0, atol=0)


def test_cholesky_contract(rng):
    a = rng.standard_normal((4, 4))
    R = a @ a.T + 0.1 * np.eye(4)
    L = rx_cholesky(R)
    np.testing.assert_array_equal(L, np.tril(L))
    np.testing.assert_allclose(L @ L.T, R, atol=1e-10)


def test_cholesky_failure_reports_eigenvalue():
    with pytest.raises(ValueError, match="min eigenvalue"):
        rx_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
def test_spatial_monte_carlo_covariance(rho):
    R = np.array([[1.0, rho], [rho, 1.0]])
    d = np.random.default_rng(11).standard_normal((2, 100, 100))  # 10k draws
    out = spatial_correlate(d, R)
    emp = np.cov(out.reshape(2, -1))
    np.testing.assert_allclose(emp, R, atol=0.05)


def test_estimated_cov_has_ridge(rng):
    X = rng.standard_normal((5, 3, 4, 6))
    R = estimate_rx_cov(X, ridge=0.0)
    Rr = estimate_rx_cov(X, ridge=1e-3)
    np.testing.assert_allclose(Rr - R, 1e-3 * np.trace(R) / 3 * np.eye(3), atol=1e-15)
    rank_one = np.ones((2, 3, 4, 5))  # singular without the ridge
    rx_cholesky(estimate_rx_cov(rank_one))


# ------------------------------------------------------------ MMD

def test_mmd_identical_points_is_zero():
    a = np.array([[1.0, 2.0]])
    X = np.concatenate([a, a])
    assert mmd_rbf(X, X.copy(), bandwidth=1.0) == 0.0


def test_mmd_far_apart_tends_to_two():
    X = np.zeros((3, 2))
    Y = np.full((3, 2), 1e3)
    assert mmd_rbf(X, Y, bandwidth=1.0) == pytest.approx(2.0, abs=1e-12)


def test_mmd_symmetry_and_tensor_agreement(rng):
    X, Y = rng.standard_normal((6, 4)), rng.standard_normal((6, 4)) + 0.5
    assert mmd_rbf(X, Y, 1.3) == pytest.approx(mmd_rbf(Y, X, 1.3), abs=1e-15)
    assert mmd_rbf_tensor(X, Tensor(Y), 1.3).item() == pytest.approx(mmd_rbf(X, Y, 1.3),
                                                                     abs=1e-12)
    assert mmd_rbf(X, Y) == pytest.approx(mmd_rbf(Y, X), abs=1e-15)  # median bandwidth


def test_mmd_needs_two_samples():
    with pytest.raises(ValueError):
        mmd_rbf(np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        mmd_rbf(np.zeros((3, 3)), np.zeros((2, 3)))


def test_mmd_concentrates_for_equal_distributions():
    rng = np.random.default_rng(5)
    m = 32
    vals = [mmd_rbf(rng.standard_normal((m, 6)), rng.standard_normal((m, 6)))
            for _ in range(100)]
    assert max(abs(v) for v in vals) < 3 / np.sqrt(m)


# ------------------------------------------------------------ projection

def test_identity_constraints_are_pure_rescale(rng):
    d = rng.standard_normal((2, 5, 9))
    proj = PhysicalProjector(np.eye(5), np.eye(2), 0.0)
    out, zero = proj(d, 2.5)
    np.testing.assert_allclose(out, d * 2.5 / np.linalg.norm(d), rtol=1e-14)
    assert not zero


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_projection_hits_eps_exactly(seed, eps):
    rng = np.random.default_rng(seed)
    clean = rng.uniform(0.1, 2.0, size=(4, 3, 6, 12))
    out, zero = project_phys(rng.standard_normal((3, 6, 12)), clean, eps, PhysConfig())
    assert not zero
    assert abs(np.linalg.norm(out) - eps) <= 1e-12 * eps


def test_zero_delta_is_flagged():
    out, zero = rescale_to(np.zeros((1, 2, 3)), 1.0)
    assert zero and not out.any()
    batch, flags = rescale_to(np.stack([np.zeros((1, 2, 3)), np.ones((1, 2, 3))]), [1.0, 2.0])
    np.testing.assert_array_equal(flags, [True, False])
    assert np.linalg.norm(batch[1]) == pytest.approx(2.0)


def _high_band(x, cutoff):
    spec = np.abs(np.fft.rfft(x, axis=-1)) ** 2
    return spec[..., np.fft.rfftfreq(x.shape[-1]) > cutoff].sum()


def test_checkerboard_high_band_energy_suppressed():
    # Doppler cutoff of the default generator: 20 Hz at 100 packets/s
    t, cutoff = 64, 20.0 / 100.0
    board = np.where(np.arange(t) % 2, 1.0, -1.0)[None, None, :] * np.ones((2, 8, 1))
    proj = PhysicalProjector.from_config(PhysConfig(sigma_t=3.0), (2, 8, t))
    # shaping alone: absolute band energy
    assert _high_band(proj.shape(board), cutoff) * 10 <= _high_band(board, cutoff)
    # full projection keeps the norm, so compare the high-band share
    slow = np.cos(2 * np.pi * 2 * np.arange(t) / t)[None, None, :] * np.ones((2, 8, 1))
    d = board + slow
    out, _ = proj(d, np.linalg.norm(d))
    share = lambda x: _high_band(x, cutoff) / np.sum(x ** 2) / (t / 2)  # noqa: E731
    assert share(out) * 10 <= share(d)


def test_projector_rejects_mismatched_cov():
    with pytest.raises(ValueError):
        PhysicalProjector.from_config(PhysConfig(rx_cov=np.eye(2)), (3, 4, 5))
