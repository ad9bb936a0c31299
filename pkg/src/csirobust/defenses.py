"""Adversarial training: PGD-AT and TRADES."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks.budget import AttackBudget, logits_of, snr_to_eps
from .attacks.pgd import pgd, pgd_engine
from .autograd import Adam, Tensor
from .autograd import functional as F
from .models.training import EarlyStopping, TrainHyper, TrainingDivergedError, fit_epochs

logger = logging.getLogger(__name__)

DEFENSES = ("pgd-at", "trades")


@dataclass
class DefenseSpec:
    kind: str = "pgd-at"
    train_snr_db: float = 20.0
    inner_steps: int = 20
    inner_restarts: int = 5
    alpha_fraction: float = 1.0
    beta: float = 2.0
    val_steps: int = 10
    hyper: TrainHyper = field(default_factory=TrainHyper)

    def __post_init__(self):
        if self.kind not in DEFENSES:
            raise ValueError(f"defense must be one of {DEFENSES}, got {self.kind!r}")
        if self.inner_steps < 1 or self.inner_restarts < 1 or self.val_steps < 1:
            raise ValueError("inner_steps, inner_restarts and val_steps must be at least 1")
        if self.kind == "trades" and not self.beta > 0:
            raise ValueError("TRADES needs beta > 0")
        if not 0 <= self.train_snr_db <= 80:
            raise ValueError("train_snr_db must lie in [0, 80]")

    def to_dict(self):
        d = asdict(self)
        d["hyper"] = self.hyper.to_dict()
        return d


def robust_val_accuracy(net, X, y, snr_db, steps=10, seed=0, with_loss=False):
    """Top-1 accuracy under a single-restart PGD probe (and, with
    ``with_loss``, the mean cross-entropy on the probed inputs)."""
    if len(X) == 0:
        return (0.0, np.inf) if with_loss else 0.0
    pert = pgd(net, X, y, AttackBudget(snr_db, steps=steps, restarts=1), seed=seed)
    acc = float(np.mean(pert.adv_pred == y))
    if not with_loss:
        return acc
    return acc, float(np.mean(pert.info["best_loss"]))


def trades_loss(net, xb, yb, delta, beta):
    """CE(f(x), y) + beta * KL(softmax f(x) || softmax f(x + delta)).

    Returns ``(loss, kl_value)``.
    """
    clean = net(Tensor(xb))
    adv = net(Tensor(xb + delta))
    kl = F.kl_div_softmax(clean, adv)
    return F.cross_entropy(clean, yb) + kl * beta, kl.item()


def _inner_seed(rng):
    return int(rng.integers(0, 2 ** 31 - 1))


def adversarial_train(net, split, spec: DefenseSpec, rng=None, audit=None):
    """Shared loop for both defenses; starts from ``net``'s current weights
    (a copy is trained and returned with its history).

    ``audit`` (a list) receives ``(max ||delta|| / eps, kl)`` per batch.
    """
    hyper = spec.hyper
    rng = np.random.default_rng(hyper.seed) if rng is None else rng
    net = copy.deepcopy(net)
    net.set_trainable(True)
    opt = Adam([(net.parameters(), hyper.lr)], weight_decay=hyper.weight_decay)
    train, val = split.train, split.val

    def loss_fn(net, xb, yb, rng):
        eps = snr_to_eps(spec.train_snr_db, xb)
        if spec.kind == "pgd-at":
            def objective(logits):
                return F.cross_entropy(logits, yb, reduction="none")
        else:
            p_clean = Tensor(logits_of(net, xb))

            def objective(logits):
                return F.kl_div_softmax(p_clean, logits, reduction="none")
        delta = pgd_engine(net, xb, eps, objective, spec.inner_steps, spec.inner_restarts,
                           spec.alpha_fraction, seed=_inner_seed(rng))[0]
        ratio = float(np.max(np.sqrt((delta.reshape(len(xb), -1) ** 2).sum(1)) / eps))
        if spec.kind == "pgd-at":
            loss, kl = F.cross_entropy(net(Tensor(xb + delta)), yb), None
        else:
            loss, kl = trades_loss(net, xb, yb, delta, spec.beta)
            if kl < -1e-12:
                raise AssertionError(f"negative KL term {kl}")
        if audit is not None:
            audit.append((ratio, kl))
        return loss

    stopper = EarlyStopping(hyper.patience, hyper.min_epochs)
    best_state, best = net.state_dict(), (-np.inf, -np.inf)
    history = []
    for epoch in range(hyper.max_epochs):
        try:
            fit_epochs(net, train, val, opt, hyper, rng, 1, loss_fn=loss_fn, history=history)
        except TrainingDivergedError:
            raise TrainingDivergedError(epoch) from None
        racc, rloss = robust_val_accuracy(net, val.X, val.y, spec.train_snr_db,
                                          spec.val_steps, seed=hyper.seed, with_loss=True)
        history[-1].update(epoch=epoch, robust_val_acc=racc, robust_val_loss=rloss)
        logger.debug("%s epoch %d robust val acc %.3f loss %.4f", spec.kind, epoch, racc, rloss)
        # robust accuracy first; the probe's loss breaks ties on small val sets
        score = (racc, -rloss)
        if score > best:
            best, best_state = score, net.state_dict()
        # the stopper minimizes, so feed it the same ordering as one number
        if stopper.step(epoch, (1.0 - racc) * 1e6 + min(rloss, 1e5)):
            break
    net.load_state_dict(best_state)
    return net, history


def pgd_at(net, split, spec: DefenseSpec | None = None, rng=None, audit=None):
    spec = spec or DefenseSpec("pgd-at")
    if spec.kind != "pgd-at":
        raise ValueError("pgd_at needs a pgd-at spec")
    return adversarial_train(net, split, spec, rng, audit)


def trades(net, split, spec: DefenseSpec | None = None, rng=None, audit=None):
    spec = spec or DefenseSpec("trades")
    if spec.kind != "trades":
        raise ValueError("trades needs a trades spec")
    return adversarial_train(net, split, spec, rng, audit)

