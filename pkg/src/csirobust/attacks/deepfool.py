"""Batched multiclass DeepFool."""

from __future__ import annotations

import numpy as np

from ..autograd import Tensor, grad
from ..utils.validation import check_csi
from .budget import Perturbation, _norms, logits_of, measure_psr, network_of, snr_to_eps

TIE_NUDGE = 1e-6


def class_gradients(net, X):
    """Logits (N, C) and input gradients of every logit, shape (C, N, A, K, T).

    One forward pass; the tape is replayed once per class with a one-hot
    seed (samples do not interact, so a batch seed yields per-sample rows).
    """
    xt = Tensor(X, requires_grad=True)
    logits = net(xt)
    n, c = logits.shape
    grads = np.empty((c,) + X.shape)
    for k in range(c):
        seed = np.zeros((n, c))
        seed[:, k] = 1.0
        (grads[k],) = grad(logits, [xt], seed=seed)
    return logits.data, grads


def deepfool(model, X, max_iter=100, overshoot=0.02, snr_db=None):
    """Minimal l2 perturbations that change each sample's predicted class.

    Each iteration linearizes every rival class k against the current
    prediction and steps to the nearest linearized boundary (plus a
    ``1e-6`` nudge so exact ties still cross). Iterates are checked at
    ``x + (1 + overshoot) r``, which is also the returned perturbation.
    Rivals with a vanishing gradient difference are skipped; a sample with
    none left fails.

    With ``snr_db`` the perturbation is clipped to the l2 budget and
    success is judged after clipping.
    """
    X = check_csi(X)
    net = network_of(model)
    n = X.shape[0]
    clean_pred = logits_of(net, X).argmax(1)
    r_tot = np.zeros_like(X)
    active = np.ones(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    iters = np.zeros(n, dtype=np.int64)
    scale = 1.0 + overshoot
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        logits, grads = class_gradients(net, X[idx] + scale * r_tot[idx])
        cur = logits.argmax(1)
        still = cur == clean_pred[idx]
        active[idx[~still]] = False
        for j in np.flatnonzero(still):
            i = idx[j]
            k0 = clean_pred[i]
            w = grads[:, j] - grads[k0, j]
            f = logits[j] - logits[j, k0]
            wn = _norms(w)
            ok = wn > 0
            ok[k0] = False
            if not ok.any():
                failed[i] = True
                active[i] = False
                continue
            dist = np.where(ok, (np.abs(f) + TIE_NUDGE) / np.where(ok, wn, 1.0), np.inf)
            k = int(np.argmin(dist))
            r_tot[i] += (np.abs(f[k]) + TIE_NUDGE) / wn[k] ** 2 * w[k]
            iters[i] += 1
    delta = scale * r_tot
    eps = None
    if snr_db is not None:
        eps = snr_to_eps(snr_db, X)
        nd = _norms(delta)
        shrink = np.minimum(1.0, eps / np.maximum(nd, 1e-300))
        delta = delta * shrink[:, None, None, None]
    adv_pred = logits_of(net, X + delta).argmax(1)
    success = (adv_pred != clean_pred) & ~failed
    return Perturbation(delta, measure_psr(X, delta), success, iters, eps, clean_pred, adv_pred,
                        {"failed": failed, "unclipped_norm": _norms(scale * r_tot)})
