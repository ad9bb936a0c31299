"""l2 projected gradient descent, optionally with the physical projection
and an MMD penalty (the constrained variant)."""

from __future__ import annotations

import numpy as np

from ..autograd import Tensor, grad, no_grad
from ..autograd import functional as F
from ..models.networks import network_classes
from ..physcon import mmd_rbf_tensor, resolve_bandwidth
from ..utils.validation import check_csi_labels, derive_rng
from .budget import (AttackBudget, Perturbation, _norms, logits_of, measure_psr, network_of,
                     project_l2, snr_to_eps)


def _unit(g):
    n = _norms(g).reshape((-1,) + (1,) * (g.ndim - 1))
    return np.where(n > 0, g / np.where(n > 0, n, 1.0), 0.0)


def random_ball_start(rng, shape, eps):
    """Uniform draw from the l2 ball of radius ``eps`` in R^shape."""
    d = int(np.prod(shape))
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    return v * eps * rng.uniform() ** (1.0 / d)


def pgd_engine(net, X, eps, objective, steps, restarts, alpha_fraction=1.0, projector=None,
               seed=0, sample_ids=None, sign_step=False, extra_term=None, hit=None):
    """Maximize a per-sample objective over l2 balls of radius ``eps``.

    ``objective(logits)`` maps a logits Tensor (N, C) to per-sample values
    (Tensor (N,)). ``extra_term(x_adv_tensor, delta)`` may add a batch-level
    scalar (Tensor) to the ascent direction only. Restart selection keeps,
    per sample, the restart with the largest final objective.

    Returns ``(delta, best_value, restart_values, first_hit_step)``.
    """
    n = X.shape[0]
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    eps = np.asarray(eps, dtype=np.float64).reshape(n)
    alpha = (alpha_fraction * eps / 10.0).reshape(-1, 1, 1, 1)

    def project(delta):
        if projector is None:
            return project_l2(delta, eps)
        return projector(delta, eps)[0]

    best_delta = np.zeros_like(X)
    best_val = np.full(n, -np.inf)
    best_hit = np.full(n, steps)
    values = np.zeros((n, restarts))
    for r in range(restarts):
        delta = np.stack([random_ball_start(derive_rng(seed, int(i), r), X.shape[1:], e)
                          for i, e in zip(ids, eps)])
        delta = project(delta)
        first_hit = np.full(n, steps)
        for t in range(steps):
            xt = Tensor(X + delta, requires_grad=True)
            logits = net(xt)
            total = F.sum(objective(logits))
            if extra_term is not None:
                total = total + extra_term(xt, delta)
            (g,) = grad(total, [xt])
            if hit is not None:
                h = hit(logits.data)
                first_hit = np.where(h & (first_hit == steps), t, first_hit)
            step = np.sign(g) if sign_step else _unit(g)
            delta = project(delta + alpha * step)
        with no_grad():
            final = objective(net(Tensor(X + delta))).data
        values[:, r] = final
        better = final > best_val
        best_val = np.where(better, final, best_val)
        best_delta[better] = delta[better]
        best_hit = np.where(better, first_hit, best_hit)
    return best_delta, best_val, values, best_hit


def pgd(model, X, y, budget: AttackBudget, projector=None, mmd_weight=0.0,
        mmd_bandwidth="median", seed=0, sample_ids=None, sign_step=False):
    """Cross-entropy PGD on a batch ``X`` (N, A, K, T) with labels ``y``.

    Step size is ``alpha_fraction * eps / 10``. Each step moves along the
    normalized gradient (``sign_step`` switches to sign steps) and then
    either scales back onto the l2 ball or, with ``projector``, applies the
    physical shaping and rescales to exactly ``eps``. Untargeted attacks
    ascend CE(y); targeted ones descend CE(target). ``mmd_weight`` > 0
    penalizes ``w * MMD^2(X, X + delta)`` in either case.

    Random starts for sample i, restart r come from ``derive_rng(seed, id_i, r)``
    so results do not depend on how samples are batched. The restart with
    the largest final attack objective is kept.
    """
    X, y = check_csi_labels(X, y)
    net = network_of(model)
    n = X.shape[0]
    eps = snr_to_eps(budget.snr_db, X)
    labels = budget.targets(y, network_classes(net)) if budget.targeted else y
    if budget.targeted and np.any(labels == y):
        raise ValueError("target class equals the true class for some samples")
    sign = -1.0 if budget.targeted else 1.0

    def objective(logits):
        return F.cross_entropy(logits, labels, reduction="none") * sign

    extra = None
    if mmd_weight > 0 and n >= 2:
        flat = X.reshape(n, -1)

        def extra(xt, delta):
            sigma = resolve_bandwidth(flat, (X + delta).reshape(n, -1), mmd_bandwidth)
            return mmd_rbf_tensor(flat, F.reshape(xt, (n, -1)), sigma) * (-mmd_weight * n)

    def hit(logits):
        pred = logits.argmax(1)
        return (pred == labels) if budget.targeted else (pred != labels)

    delta, best, values, iters = pgd_engine(
        net, X, eps, objective, budget.steps, budget.restarts, budget.alpha_fraction,
        projector, seed, sample_ids, sign_step, extra, hit)
    clean_pred = logits_of(net, X).argmax(1)
    adv_pred = logits_of(net, X + delta).argmax(1)
    success = (adv_pred == labels) if budget.targeted else (adv_pred != y)
    return Perturbation(delta, measure_psr(X, delta), success, iters, eps, clean_pred, adv_pred,
                        {"restart_losses": values, "best_loss": best,
                         "targets": labels if budget.targeted else None})
