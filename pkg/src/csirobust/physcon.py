"""Physically constrained perturbation shaping for CSI amplitude tensors.

A perturbation is pushed through three linear channel-realism filters
(subcarrier correlation from the power delay profile, Gaussian temporal
smoothing for the Doppler limit, receive-antenna correlation) and then
rescaled to the energy budget. An RBF-kernel MMD statistic is provided both
as a numpy estimator and as a differentiable penalty for attack losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .autograd import functional as F
from .autograd.tensor import Tensor, as_tensor

PDP_KINDS = ("gaussian", "exponential")


@dataclass
class PhysConfig:
    """Channel-realism parameters. ``rx_cov=None`` means estimate from clean
    training amplitudes with a ridge of ``ridge * trace(R) / A``."""

    pdp_kind: str = "gaussian"
    tau_rms: float = 50e-9
    subcarrier_spacing: float = 312.5e3
    center_freq: float = 2.437e9
    freqs: np.ndarray | None = None
    sigma_t: float = 3.0
    rx_cov: np.ndarray | None = None
    ridge: float = 1e-3
    mmd_weight: float = 0.25
    mmd_bandwidth: str | float = "median"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pdp_kind not in PDP_KINDS:
            raise ValueError(f"pdp_kind must be one of {PDP_KINDS}, got {self.pdp_kind!r}")
        if not self.tau_rms > 0:
            raise ValueError("tau_rms must be positive")
        if self.sigma_t < 0:
            raise ValueError("sigma_t must be non-negative")
        if self.freqs is not None:
            self.freqs = _check_freqs(self.freqs)
        if self.rx_cov is not None:
            self.rx_cov = np.asarray(self.rx_cov, dtype=np.float64)
            if not np.allclose(self.rx_cov, self.rx_cov.T):
                raise ValueError("rx_cov must be symmetric")

    def subcarrier_freqs(self, n_subcarriers):
        if self.freqs is not None:
            if len(self.freqs) != n_subcarriers:
                raise ValueError(f"{len(self.freqs)} frequencies for {n_subcarriers} subcarriers")
            return self.freqs
        return subcarrier_grid(n_subcarriers, self.subcarrier_spacing, self.center_freq)


def subcarrier_grid(n_subcarriers, spacing, center=0.0):
    offsets = (np.arange(n_subcarriers) - (n_subcarriers - 1) / 2.0) * spacing
    return center + offsets


def _check_freqs(freqs):
    freqs = np.asarray(freqs, dtype=np.float64).ravel()
    if freqs.size < 1:
        raise ValueError("at least one subcarrier frequency required")
    if np.any(np.diff(freqs) <= 0):
        raise ValueError("subcarrier frequencies must be strictly increasing")
    return freqs


def freq_corr_matrix(freqs, tau_rms, pdp_kind="gaussian"):
    """Toeplitz subcarrier correlation implied by a Gaussian or exponential PDP."""
    freqs = _check_freqs(freqs)
    if tau_rms < 0:
        raise ValueError("tau_rms must be non-negative")
    x = (2.0 * np.pi * tau_rms * np.abs(freqs[:, None] - freqs[None, :])) ** 2
    if pdp_kind == "gaussian":
        C = np.exp(-x)
    elif pdp_kind == "exponential":
        C = 1.0 / np.sqrt(1.0 + x)
    else:
        raise ValueError(f"pdp_kind must be one of {PDP_KINDS}, got {pdp_kind!r}")
    d = np.sqrt(np.diag(C))
    return C / np.outer(d, d)


def gaussian_kernel(sigma_t):
    radius = int(np.ceil(3.0 * sigma_t - 1e-12))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-t ** 2 / (2.0 * sigma_t ** 2))
    return g / g.sum()


def temporal_smooth(delta, sigma_t):
    """Gaussian smoothing along the last (packet) axis, truncated at 3 sigma,
    with mirrored boundaries. ``sigma_t == 0`` is the identity."""
    delta = np.asarray(delta, dtype=np.float64)
    if sigma_t < 0:
        raise ValueError("sigma_t must be non-negative")
    if sigma_t == 0:
        return delta.copy()
    return correlate1d(delta, gaussian_kernel(sigma_t), axis=-1, mode="reflect")


def frequency_correlate(delta, C):
    """Apply C along the subcarrier axis (axis -2)."""
    return np.einsum("ij,...jt->...it", C, np.asarray(delta, dtype=np.float64))


def estimate_rx_cov(X, ridge=1e-3):
    """Antenna second-moment matrix E[h h^T] over (sample, subcarrier, packet)
    plus a trace-scaled ridge."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    n_ant = X.shape[1]
    R = np.einsum("nakt,nbkt->ab", X, X) / (X.shape[0] * X.shape[2] * X.shape[3])
    return R + ridge * np.trace(R) / n_ant * np.eye(n_ant)


def rx_cholesky(rx_cov):
    R = np.asarray(rx_cov, dtype=np.float64)
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise ValueError("receive covariance is not positive definite; min eigenvalue "
                         f"{np.linalg.eigvalsh((R + R.T) / 2).min():.3e}") from None


def spatial_correlate(delta, rx_cov=None, L=None):
    """Right-multiply every per-(subcarrier, packet) antenna vector by L^T."""
    if L is None:
        L = rx_cholesky(rx_cov)
    delta = np.asarray(delta, dtype=np.float64)
    return np.einsum("ab,...bkt->...akt", L, delta)


# ----------------------------------------------------------------------- MMD

def _flatten_rows(X):
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(X.shape[0], -1)


def _sq_dists(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def median_bandwidth(X, Y):
    """Median pairwise distance of the pooled batch (sigma of the RBF)."""
    Z = np.concatenate([_flatten_rows(X), _flatten_rows(Y)])
    d = np.sqrt(_sq_dists(Z, Z)[np.triu_indices(Z.shape[0], k=1)])
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def resolve_bandwidth(X, Y, bandwidth):
    if bandwidth == "median":
        return median_bandwidth(X, Y)
    sigma = float(bandwidth)
    if not sigma > 0:
        raise ValueError("fixed MMD bandwidth must be positive")
    return sigma


def mmd_rbf(X, Y, bandwidth="median"):
    """Squared MMD with within-sample terms excluding i == j and a full
    cross term, k(u, v) = exp(-||u - v||^2 / (2 sigma^2))."""
    X, Y = _flatten_rows(X), _flatten_rows(Y)
    m = X.shape[0]
    if m < 2 or Y.shape[0] != m:
        raise ValueError(f"mmd_rbf needs two batches of equal size >= 2; got {m} and {Y.shape[0]}")
    gamma = 1.0 / (2.0 * resolve_bandwidth(X, Y, bandwidth) ** 2)
    kxx = np.exp(-gamma * _sq_dists(X, X))
    kyy = np.exp(-gamma * _sq_dists(Y, Y))
    kxy = np.exp(-gamma * _sq_dists(X, Y))
    off = ~np.eye(m, dtype=bool)
    within = (kxx[off].sum() + kyy[off].sum()) / (m * (m - 1))
    return float(within - 2.0 * kxy.sum() / m ** 2)


def mmd_rbf_tensor(X, Y, sigma):
    """Differentiable squared MMD with clean rows ``X`` (array) and perturbed
    rows ``Y`` (tensor) of shape (m, d)."""
    X = _flatten_rows(X)
    Y = as_tensor(Y)
    m = X.shape[0]
    if m < 2 or Y.shape != X.shape:
        raise ValueError(f"mmd needs matching batches of size >= 2; got {X.shape}, {Y.shape}")
    gamma = 1.0 / (2.0 * sigma ** 2)
    off = 1.0 - np.eye(m)
    kxx = np.exp(-gamma * _sq_dists(X, X))
    term_x = float((kxx * off).sum()) / (m * (m - 1))
    sq_y = F.sum(Y * Y, axis=1)
    d_yy = F.reshape(sq_y, (m, 1)) + F.reshape(sq_y, (1, m)) - 2.0 * F.matmul(Y, F.transpose(Y))
    term_y = F.sum(F.exp(d_yy * (-gamma)) * off) * (1.0 / (m * (m - 1)))
    sq_x = (X * X).sum(1)
    d_xy = F.reshape(sq_y, (1, m)) + sq_x[:, None] - 2.0 * F.matmul(Tensor(X), F.transpose(Y))
    cross = F.sum(F.exp(d_xy * (-gamma))) * (2.0 / m ** 2)
    return term_y - cross + term_x


# -------------------------------------------------------------- projection

class PhysicalProjector:
    """Precomputed frequency/temporal/spatial shaping plus energy rescale.

    Matrices are built once and only read afterwards, so one projector can
    serve concurrent attacks.
    """

    def __init__(self, C, L, sigma_t, config=None):
        self.C = np.asarray(C, dtype=np.float64)
        self.L = np.asarray(L, dtype=np.float64)
        self.sigma_t = float(sigma_t)
        self.config = config

    @classmethod
    def from_config(cls, cfg: PhysConfig, dims, clean=None):
        n_ant, n_sub, _ = dims
        C = freq_corr_matrix(cfg.subcarrier_freqs(n_sub), cfg.tau_rms, cfg.pdp_kind)
        if cfg.rx_cov is not None:
            R = cfg.rx_cov
            if R.shape != (n_ant, n_ant):
                raise ValueError(f"rx_cov shape {R.shape} does not match {n_ant} antennas")
        elif clean is not None:
            R = estimate_rx_cov(clean, cfg.ridge)
        else:
            R = np.eye(n_ant)
        return cls(C, rx_cholesky(R), cfg.sigma_t, cfg)

    def shape(self, delta):
        """Correlation shaping without the energy step."""
        out = frequency_correlate(delta, self.C)
        out = temporal_smooth(out, self.sigma_t)
        return spatial_correlate(out, L=self.L)

    def __call__(self, delta, eps):
        return rescale_to(self.shape(delta), eps)


def rescale_to(delta, eps):
    """Scale each sample to l2 norm exactly ``eps``; all-zero samples stay zero
    and are flagged."""
    delta = np.asarray(delta, dtype=np.float64)
    single = delta.ndim == 3
    batch = delta[None] if single else delta
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (batch.shape[0],))
    norms = np.sqrt((batch.reshape(batch.shape[0], -1) ** 2).sum(1))
    zero = norms == 0
    scale = np.where(zero, 0.0, eps / np.where(zero, 1.0, norms))
    out = batch * scale[:, None, None, None]
    return (out[0], bool(zero[0])) if single else (out, zero)


def project_phys(delta, clean_batch, eps, cfg: PhysConfig, projector=None):
    """Shape ``delta`` (A, K, T) or (N, A, K, T) and rescale it to ``eps``.

    ``clean_batch`` supplies the receive covariance when ``cfg.rx_cov`` is
    unset. Returns ``(projected, zero_flag)``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if projector is None:
        dims = delta.shape[-3:]
        if clean_batch is not None and np.shape(clean_batch)[-3:] != dims:
            raise ValueError(f"clean batch dims {np.shape(clean_batch)[-3:]} != {dims}")
        projector = PhysicalProjector.from_config(cfg, dims, clean_batch)
    return projector(delta, eps)
