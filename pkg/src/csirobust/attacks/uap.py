"""Universal (input-agnostic) perturbations built from DeepFool steps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..physcon import PhysConfig, PhysicalProjector
from ..utils.validation import check_csi, check_random_state
from .budget import PSR_SENTINEL, _norms, logits_of, network_of, project_l2
from .deepfool import deepfool


@dataclass
class UniversalPerturbation:
    v: np.ndarray
    xi: float
    fooling_rate: float
    fooled: np.ndarray
    passes_used: int
    achieved_psr_db: float
    norm_history: list = field(default_factory=list)
    fooling_history: list = field(default_factory=list)


def mean_norm(X, rng, n_batches=50, batch_size=32):
    """Mean l2 norm over ``n_batches`` minibatches drawn with replacement."""
    norms = _norms(X)
    picks = rng.integers(0, len(X), size=(n_batches, batch_size))
    return float(norms[picks].mean())


def fooling_rate(net, X, v, clean_pred=None):
    clean_pred = logits_of(net, X).argmax(1) if clean_pred is None else clean_pred
    fooled = logits_of(net, X + v[None]).argmax(1) != clean_pred
    return float(fooled.mean()) if len(X) else 0.0, fooled


def uap(model, X, snr_db, passes=5, fooling_target=0.9, aggregate=False, preserve_corr=False,
        physcfg: PhysConfig | None = None, projector=None, batch_size=32, norm_batches=50,
        norm_batch_size=32, df_max_iter=10, overshoot=0.02, seed=0):
    """Search a single ``v`` with ``||v|| <= xi`` that flips most predictions.

    ``xi = 10**(-snr/20) * mean ||x||``. Per minibatch, DeepFool increments
    are computed at ``x + v`` for samples whose prediction is still the
    clean one. The naive mode adds them one after another, projecting onto
    the xi-ball after each; ``aggregate`` applies their mean once per
    batch. ``preserve_corr`` passes every increment through the frequency,
    temporal and spatial shaping of the physical projection (no rescale).
    """
    X = check_csi(X)
    if len(X) == 0:
        raise ValueError("uap needs a nonempty dataset")
    net = network_of(model)
    rng = check_random_state(seed)
    xi = 10.0 ** (-float(snr_db) / 20.0) * mean_norm(X, rng, norm_batches, norm_batch_size)
    if preserve_corr and projector is None:
        projector = PhysicalProjector.from_config(physcfg or PhysConfig(), X.shape[1:], X)
    clean_pred = logits_of(net, X).argmax(1)
    v = np.zeros(X.shape[1:])
    rate, fooled = fooling_rate(net, X, v, clean_pred)
    out = UniversalPerturbation(v, xi, rate, fooled, 0, -np.inf, [0.0], [rate])
    if rate >= fooling_target:
        out.achieved_psr_db = _psr(v, X)
        return out

    for p in range(passes):
        order = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            xb = X[idx] + v[None]
            keep = logits_of(net, xb).argmax(1) == clean_pred[idx]
            if not keep.any():
                continue
            dv = deepfool(net, xb[keep], max_iter=df_max_iter, overshoot=overshoot).delta
            if preserve_corr:
                dv = projector.shape(dv)
            if aggregate:
                v = project_l2((v + dv.mean(0))[None], xi)[0]
                out.norm_history.append(float(np.linalg.norm(v)))
            else:
                for d in dv:
                    v = project_l2((v + d)[None], xi)[0]
                    out.norm_history.append(float(np.linalg.norm(v)))
        rate, fooled = fooling_rate(net, X, v, clean_pred)
        out.fooling_history.append(rate)
        out.passes_used = p + 1
        if rate >= fooling_target:
            break
    out.v, out.fooling_rate, out.fooled = v, rate, fooled
    out.achieved_psr_db = _psr(v, X)
    return out


def _psr(v, X):
    nv = float(np.linalg.norm(v))
    if nv == 0:
        return PSR_SENTINEL
    return 20.0 * np.log10(nv / float(_norms(X).mean()))
