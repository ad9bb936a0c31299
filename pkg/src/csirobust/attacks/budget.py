"""Energy budgets (SNR <-> l2 radius) and the perturbation record."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autograd import Tensor, no_grad

PSR_SENTINEL = -200.0  # reported for an all-zero perturbation


def _norms(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim <= 3:
        return np.sqrt(np.sum(x * x))
    return np.sqrt((x.reshape(x.shape[0], -1) ** 2).sum(1))


def snr_to_eps(snr_db, x):
    """l2 radius ``10**(-snr/20) * ||x||``; per sample when ``x`` is a batch."""
    norms = _norms(x)
    if np.any(norms == 0):
        raise ValueError("snr_to_eps needs a nonzero input")
    return 10.0 ** (-float(snr_db) / 20.0) * norms


def measure_psr(x, delta):
    """Perturbation-to-signal ratio in dB (the negated SNR)."""
    nx, nd = _norms(x), _norms(delta)
    if np.any(nx == 0):
        raise ValueError("measure_psr needs a nonzero input")
    with np.errstate(divide="ignore"):
        psr = 20.0 * np.log10(nd / nx)
    return np.where(nd == 0, PSR_SENTINEL, psr) if np.ndim(psr) else (
        PSR_SENTINEL if nd == 0 else float(psr))


@dataclass(frozen=True)
class AttackBudget:
    """``mode`` is "untargeted" or "targeted"; a targeted budget without
    ``target_class`` maps each source label y to (y + 1) mod C."""

    snr_db: float = 20.0
    steps: int = 100
    alpha_fraction: float = 1.0
    restarts: int = 5
    mode: str = "untargeted"
    target_class: int | None = None

    def __post_init__(self):
        if not 0 <= self.snr_db <= 80:
            raise ValueError(f"snr_db must lie in [0, 80], got {self.snr_db}")
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("steps and restarts must be at least 1")
        if not self.alpha_fraction > 0:
            raise ValueError("alpha_fraction must be positive")
        if self.mode not in ("untargeted", "targeted"):
            raise ValueError(f"mode must be untargeted or targeted, got {self.mode!r}")

    @property
    def targeted(self):
        return self.mode == "targeted"

    def targets(self, y, n_classes):
        y = np.asarray(y)
        if self.target_class is not None:
            return np.full_like(y, self.target_class)
        return (y + 1) % n_classes


@dataclass
class Perturbation:
    """Batch of per-sample perturbations with their outcome.

    ``success`` means the prediction left the clean label (untargeted) or
    reached the target (targeted).
    """

    delta: np.ndarray
    achieved_psr_db: np.ndarray
    success: np.ndarray
    iterations_used: np.ndarray
    eps: np.ndarray | None = None
    clean_pred: np.ndarray | None = None
    adv_pred: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __len__(self):
        return self.delta.shape[0]

    def norms(self):
        return _norms(self.delta)


def logits_of(net, X, batch_size=256):
    out = []
    with no_grad():
        for i in range(0, len(X), batch_size):
            out.append(net(Tensor(X[i:i + batch_size])).data)
    return np.concatenate(out) if out else np.zeros((0, 0))


def network_of(model):
    """Accept a fitted estimator (``network_``) or a bare network."""
    net = getattr(model, "network_", model)
    if not callable(net):
        raise TypeError(f"{type(model).__name__} is not a model")
    return net


def project_l2(delta, eps):
    """Scale rows onto the l2 ball: multiply by min(1, eps / ||delta||)."""
    n = _norms(delta).reshape(-1)
    scale = np.minimum(1.0, np.asarray(eps, dtype=np.float64).reshape(-1)
                       / np.maximum(n, 1e-300))
    return delta * scale.reshape((-1,) + (1,) * (delta.ndim - 1))
