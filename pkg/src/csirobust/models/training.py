"""Clean training, autoencoder pretraining and two-phase head fine-tuning."""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autograd import Adam, NonFiniteError, ReduceLROnPlateau, Tensor, grad, no_grad
from ..autograd import functional as F
from .networks import network_classes

logger = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch, what="loss"):
        super().__init__(f"training diverged: non-finite {what} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainHyper:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    max_epochs: int = 100
    patience: int = 25
    min_epochs: int = 40
    batch_size: int = 32
    seed: int = 0
    contractive_lambda: float = 2e-4
    # fraction of training over which mask focus decays from 1 to 0
    mask_focus_schedule: float = 0.4
    phaseA_epochs: int = 10
    phaseB_epochs: int = 30
    head_lr: float = 2e-3
    encoder_lr: float = 2e-4
    mask_width: float = 0.1
    contractive_every: int = 4
    contractive_fraction: float = 0.5
    ae_clip_norm: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("lr", "max_epochs", "patience", "batch_size", "head_lr", "encoder_lr",
                     "phaseA_epochs", "phaseB_epochs", "contractive_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("weight_decay", "min_epochs", "seed", "contractive_lambda"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if not 0 < self.mask_focus_schedule <= 1 or not 0 < self.mask_width < 1:
            raise ValueError("mask_focus_schedule and mask_width must be fractions")
        if not 0 < self.contractive_fraction <= 1:
            raise ValueError("contractive_fraction must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)


class EarlyStopping:
    """Patience counter on validation loss that only arms after ``min_epochs``.

    With a constant loss training stops after ``min_epochs + patience``
    epochs.
    """

    def __init__(self, patience, min_epochs=0):
        self.patience = patience
        self.min_epochs = min_epochs
        self.best = np.inf
        self.best_epoch = -1
        self.bad = 0

    def step(self, epoch, loss):
        """Record epoch ``epoch`` (0-based); returns True when training should stop."""
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            improved = True
        else:
            improved = False
        if epoch + 1 <= self.min_epochs:
            return False
        self.bad = 0 if improved else self.bad + 1
        return self.bad >= self.patience

    @property
    def improved_last(self):
        return self.bad == 0


def minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def predict_logits(net, X, batch_size=256):
    out = []
    with no_grad():
        for i in range(0, X.shape[0], batch_size):
            out.append(net(Tensor(X[i:i + batch_size])).data)
    if not out:
        return np.zeros((0, network_classes(net)))
    return np.concatenate(out)


def evaluate_loss(net, X, y, batch_size=256):
    logits = predict_logits(net, X, batch_size)
    logp = logits - logits.max(1, keepdims=True)
    logp -= np.log(np.exp(logp).sum(1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean()), float((logits.argmax(1) == y).mean())


def _check(value, epoch, what="loss"):
    if not np.isfinite(value):
        raise TrainingDivergedError(epoch, what)


@contextmanager
def _diverge_guard(epoch):
    """Report a non-finite intermediate inside an epoch as divergence."""
    try:
        yield
    except NonFiniteError as exc:
        raise TrainingDivergedError(epoch, f"value ({exc})") from exc


def _step(net, opt, loss):
    params = opt.active_params()
    grads = grad(loss, params)
    opt.step({id(p): g for p, g in zip(params, grads)})


def fit_epochs(net, train, val, opt, hyper, rng, max_epochs, stopper=None, scheduler=None,
               loss_fn=None, history=None, on_epoch=None):
    """Generic supervised loop shared by clean training and fine-tuning.

    ``loss_fn(net, xb, yb, rng)`` returns the scalar training loss Tensor;
    cross-entropy by default. The best-validation-loss weights are restored
    when ``stopper`` is given.
    """
    if loss_fn is None:
        def loss_fn(net, xb, yb, rng):
            return F.cross_entropy(net(Tensor(xb)), yb)
    history = history if history is not None else []
    best_state = net.state_dict()
    best_loss = np.inf
    for epoch in range(max_epochs):
        total, seen = 0.0, 0
        with _diverge_guard(epoch):
            for idx in minibatches(len(train), hyper.batch_size, rng):
                loss = loss_fn(net, train.X[idx], train.y[idx], rng)
                _check(loss.item(), epoch)
                _step(net, opt, loss)
                total += loss.item() * len(idx)
                seen += len(idx)
            val_loss, val_acc = evaluate_loss(net, val.X, val.y)
        train_loss = total / max(seen, 1)
        _check(val_loss, epoch, "validation loss")
        rec = {"epoch": len(history), "train_loss": train_loss, "val_loss": val_loss,
               "val_acc": val_acc, "lr": opt.groups[0]["lr"]}
        if on_epoch is not None:
            rec.update(on_epoch(net) or {})
        history.append(rec)
        logger.debug("epoch %d train %.4f val %.4f acc %.3f", epoch, train_loss, val_loss,
                     val_acc)
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = net.state_dict()
        if scheduler is not None:
            scheduler.step(val_loss)
        if stopper is not None and stopper.step(epoch, val_loss):
            break
    if stopper is not None:
        net.load_state_dict(best_state)
    return history


def train_clean(net, split, hyper: TrainHyper, rng=None):
    """Adam + early stopping on validation loss; restores the best weights.

    ``split`` needs ``train`` and ``val`` datasets. Returns the history list.
    """
    rng = np.random.default_rng(hyper.seed) if rng is None else rng
    net.set_trainable(True)
    opt = Adam([(net.parameters(), hyper.lr)], weight_decay=hyper.weight_decay)
    stopper = EarlyStopping(hyper.patience, hyper.min_epochs)
    return fit_epochs(net, split.train, split.val, opt, hyper, rng, hyper.max_epochs, stopper)


def mask_focus(progress, schedule=0.4):
    """Masked-loss weight at ``progress`` in [0, 1] of training: linear
    1 -> 0 over the first ``schedule`` fraction, zero afterwards."""
    return float(max(0.0, 1.0 - progress / schedule))


def contiguous_mask(rng, n, t, width_fraction=0.1):
    """Boolean (n, t) masks, each one contiguous run of ceil(width*T) packets."""
    w = max(1, int(np.ceil(width_fraction * t)))
    start = rng.integers(0, t - w + 1, size=n)
    pos = np.arange(t)[None, :]
    return (pos >= start[:, None]) & (pos < start[:, None] + w)


def contractive_penalty(encode, x, rng, h=1e-3):
    """Stochastic estimate of the mean squared Frobenius norm of dz/dx.

    One random unit direction ``v`` per sample; ``n * ||J v||^2`` is unbiased
    for ``||J||_F^2`` (n = input size). ``J v`` is a central difference, so
    the estimate stays differentiable w.r.t. the encoder parameters and is
    exact for linear encoders.
    """
    n_in = int(np.prod(x.shape[1:]))
    v = rng.standard_normal(x.shape)
    v /= np.sqrt((v.reshape(len(x), -1) ** 2).sum(1)).reshape((-1,) + (1,) * (x.ndim - 1))
    jv = (encode(Tensor(x + h * v)) - encode(Tensor(x - h * v))) * (1.0 / (2 * h))
    per = F.sum(F.reshape(jv * jv, (len(x), -1)), axis=1)
    return F.mean(per) * float(n_in)


def pretrain_autoencoder(ae, split, hyper: TrainHyper, rng=None):
    """Reconstruction pretraining: MSE + focus * masked MSE + contractive term.

    Returns the history; ``ae`` is left at its best-validation weights.
    """
    rng = np.random.default_rng(hyper.seed) if rng is None else rng
    train, val = split.train, split.val
    ae.set_trainable(True)
    opt = Adam([(ae.parameters(), hyper.lr)], weight_decay=hyper.weight_decay,
               clip_norm=hyper.ae_clip_norm)
    stopper = EarlyStopping(hyper.patience, hyper.min_epochs)
    n_batches = int(np.ceil(len(train) / hyper.batch_size))
    total_steps = hyper.max_epochs * n_batches
    history, best_state, best_loss, step = [], ae.state_dict(), np.inf, 0
    for epoch in range(hyper.max_epochs):
        running = 0.0
        with _diverge_guard(epoch):
            for idx in minibatches(len(train), hyper.batch_size, rng):
                xb = train.X[idx]
                focus = mask_focus(step / total_steps, hyper.mask_focus_schedule)
                rec = ae(Tensor(xb))
                diff = rec - xb
                sq = diff * diff
                loss = F.mean(sq)
                if focus > 0:
                    m = contiguous_mask(rng, len(idx), xb.shape[-1], hyper.mask_width)
                    m4 = np.broadcast_to(m[:, None, None, :], xb.shape).astype(np.float64)
                    loss = loss + F.sum(sq * m4) * (focus / max(m4.sum(), 1.0))
                if hyper.contractive_lambda > 0 and step % hyper.contractive_every == 0:
                    k = max(1, int(round(hyper.contractive_fraction * len(idx))))
                    sub = xb[rng.choice(len(idx), size=k, replace=False)]
                    penalty = contractive_penalty(ae.encoder, sub, rng)
                    loss = loss + penalty * hyper.contractive_lambda
                _check(loss.item(), epoch)
                _step(ae, opt, loss)
                running += loss.item() * len(idx)
                step += 1
            with no_grad():
                vrec = np.concatenate([ae(Tensor(val.X[i:i + 256])).data
                                       for i in range(0, len(val), 256)]) if len(val) else val.X
        val_mse = float(np.mean((vrec - val.X) ** 2)) if len(val) else 0.0
        _check(val_mse, epoch, "validation MSE")
        history.append({"epoch": epoch, "train_loss": running / len(train),
                        "val_mse": val_mse, "mask_focus": focus})
        if val_mse < best_loss:
            best_loss, best_state = val_mse, ae.state_dict()
        if stopper.step(epoch, val_mse):
            break
    ae.load_state_dict(best_state)
    return history


def finetune_head(net, split, hyper: TrainHyper, rng=None):
    """Two-phase fine-tuning of a :class:`TinyClassifier`.

    Phase A trains the head with the encoder frozen; phase B unfreezes the
    encoder at a lower rate under a reduce-on-plateau schedule. The best
    phase-B validation weights are kept.
    """
    rng = np.random.default_rng(hyper.seed) if rng is None else rng
    enc_params = net.encoder.parameters()
    head_params = net.head.parameters()
    history = []

    net.encoder.set_trainable(False)
    net.head.set_trainable(True)
    opt_a = Adam([(head_params, hyper.head_lr)], weight_decay=hyper.weight_decay)
    fit_epochs(net, split.train, split.val, opt_a, hyper, rng, hyper.phaseA_epochs,
               history=history, on_epoch=lambda _: {"phase": "A"})

    net.encoder.set_trainable(True)
    opt_b = Adam([(head_params, hyper.head_lr), (enc_params, hyper.encoder_lr)],
                 weight_decay=hyper.weight_decay)
    sched = ReduceLROnPlateau(opt_b, factor=0.5, patience=5)
    stopper = EarlyStopping(hyper.phaseB_epochs, 0)  # keeps best weights only
    fit_epochs(net, split.train, split.val, opt_b, hyper, rng, hyper.phaseB_epochs,
               stopper=stopper, scheduler=sched, history=history,
               on_epoch=lambda _: {"phase": "B"})
    return history
