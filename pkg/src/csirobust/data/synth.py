"""Synthetic CSI amplitude datasets drawn from a WSSUS channel model.

Each sample is a Rician channel whose scattered part is correlated across
subcarriers (power-delay-profile Toeplitz matrix), across receive antennas
(exponential correlation) and band-limited in time to the maximum Doppler
shift. A class is a deterministic Doppler trajectory: a linear chirp whose
rate differs per class, imprinted as a multiplicative amplitude modulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..physcon import PDP_KINDS, freq_corr_matrix, subcarrier_grid


class CsiSample(NamedTuple):
    amplitudes: np.ndarray  # (A, K, T)
    label: int


@dataclass
class CsiDataset:
    """Batch container: ``X`` is (N, A, K, T) float64, ``y`` is (N,) int."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 4 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X {self.X.shape} and y {self.y.shape} do not describe a dataset")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")

    def __len__(self):
        return self.X.shape[0]

    def __iter__(self):
        for x, label in zip(self.X, self.y):
            yield CsiSample(x, int(label))

    def __getitem__(self, i):
        return CsiSample(self.X[i], int(self.y[i]))

    @property
    def dims(self):
        return tuple(self.X.shape[1:])

    def subset(self, idx):
        return CsiDataset(self.X[idx], self.y[idx], self.n_classes)


@dataclass(frozen=True)
class ChannelParams:
    pdp_kind: str = "gaussian"
    tau_rms: float = 50e-9
    subcarrier_spacing: float = 312.5e3
    doppler_max: float = 20.0
    packet_rate: float = 100.0
    noise_std: float = 0.05
    rician_k: float = 10.0
    modulation_depth: float = 0.3
    antenna_corr: float = 0.5

    def __post_init__(self):
        if self.pdp_kind not in PDP_KINDS:
            raise ValueError(f"pdp_kind must be one of {PDP_KINDS}")
        if not self.tau_rms > 0:
            raise ValueError("tau_rms must be positive")
        if not self.subcarrier_spacing > 0:
            raise ValueError("subcarrier_spacing must be positive")
        if self.doppler_max < 0 or self.noise_std < 0:
            raise ValueError("doppler_max and noise_std must be non-negative")
        if not self.packet_rate > 2.0 * self.doppler_max:
            raise ValueError(f"packet_rate {self.packet_rate} Hz violates Nyquist for "
                             f"doppler_max {self.doppler_max} Hz")
        if not 0 <= self.antenna_corr < 1:
            raise ValueError("antenna_corr must lie in [0, 1)")


def _psd_sqrt(C):
    w, V = np.linalg.eigh(C)
    return V * np.sqrt(np.clip(w, 0.0, None))


def class_phase(c, n_classes, n_packets, params: ChannelParams):
    """Accumulated Doppler phase (cycles) of class ``c``: the instantaneous
    shift sweeps from 0.1 fD to fD (0.3 + 0.7 (c + 1) / C)."""
    fd = params.doppler_max
    duration = n_packets / params.packet_rate
    t = np.arange(n_packets) / params.packet_rate
    f_lo = 0.1 * fd
    f_hi = fd * (0.3 + 0.7 * (c + 1) / n_classes)
    rate = (f_hi - f_lo) / duration
    return f_lo * t + 0.5 * rate * t ** 2


def _bandlimited_noise(rng, shape, doppler_max, packet_rate):
    """Complex white noise low-passed to |f| <= doppler_max along the last axis."""
    n = shape[-1]
    w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    spec = np.fft.fft(w, axis=-1)
    keep = np.abs(np.fft.fftfreq(n, d=1.0 / packet_rate)) <= doppler_max
    spec[..., ~keep] = 0.0
    out = np.fft.ifft(spec, axis=-1)
    return out / np.sqrt(keep.sum() / n * 2.0)


def synth_generate(params: ChannelParams, n_classes, n_per_class, dims=(3, 30, 250),
                   seed=0) -> CsiDataset:
    """Generate ``n_classes * n_per_class`` labelled amplitude tensors."""
    n_ant, n_sub, n_pkt = (int(d) for d in dims)
    if min(n_ant, n_sub, n_pkt) < 1:
        raise ValueError(f"dims must be positive, got {dims}")
    if n_classes < 2:
        raise ValueError("n_classes must be at least 2")
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    rng = np.random.default_rng(seed)

    freqs = subcarrier_grid(n_sub, params.subcarrier_spacing)
    sf = _psd_sqrt(freq_corr_matrix(freqs, params.tau_rms, params.pdp_kind))
    ant = params.antenna_corr ** np.abs(np.subtract.outer(np.arange(n_ant), np.arange(n_ant)))
    sa = _psd_sqrt(ant)

    # deterministic imprint of the moving body on each antenna/subcarrier
    tau_body = 30e-9
    theta = 2 * np.pi * freqs[None, :] * tau_body + np.pi / 4 * np.arange(n_ant)[:, None]
    phases = np.stack([class_phase(c, n_classes, n_pkt, params) for c in range(n_classes)])
    signatures = 1.0 + params.modulation_depth * np.cos(
        2 * np.pi * phases[:, None, None, :] + theta[None, :, :, None])

    k = params.rician_k
    total = n_classes * n_per_class
    X = np.empty((total, n_ant, n_sub, n_pkt))
    y = np.repeat(np.arange(n_classes), n_per_class)
    for i, c in enumerate(y):
        los = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(n_ant, 1, 1)))
        scatter = _bandlimited_noise(rng, (n_ant, n_sub, n_pkt), params.doppler_max,
                                     params.packet_rate)
        scatter = np.einsum("ab,bkt->akt", sa, np.einsum("kj,ajt->akt", sf, scatter))
        base = np.sqrt(k / (k + 1)) * los + np.sqrt(1 / (k + 1)) * scatter
        amp = np.abs(base) * signatures[c]
        if params.noise_std > 0:
            amp = np.abs(amp + params.noise_std * rng.standard_normal(amp.shape))
        X[i] = amp
    return CsiDataset(X, y, n_classes)
