"""Layers, parameter containers and optimizers built on the tape."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


class Module:
    """Parameter container. Sub-modules and parameters are discovered from
    instance attributes in assignment order, so names are stable."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self, trainable_only=False):
        return [p for _, p in self.named_parameters()
                if p.trainable or not trainable_only]

    def n_params(self, trainable_only=True):
        return int(sum(p.size for p in self.parameters(trainable_only)))

    def set_trainable(self, flag: bool):
        for p in self.parameters():
            p.trainable = flag
        return self

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng):
        self.weight = Parameter(he_uniform(rng, (n_in, n_out), n_in))
        self.bias = Parameter(np.zeros(n_out))

    def forward(self, x):
        return F.matmul(x, self.weight) + self.bias


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, dilation=1, padding="same"):
        self.weight = Parameter(he_uniform(rng, (c_out, c_in, kernel), c_in * kernel))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.dilation = dilation
        self.padding = padding

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, stride=self.stride,
                        dilation=self.dilation, padding=self.padding)


class GRU(Module):
    """Single-layer GRU over (N, C, T) inputs returning the last state."""

    def __init__(self, n_in, hidden, rng):
        bound = 1.0 / np.sqrt(hidden)
        self.w_ih = Parameter(rng.uniform(-bound, bound, (n_in, 3 * hidden)))
        self.w_hh = Parameter(rng.uniform(-bound, bound, (hidden, 3 * hidden)))
        self.b_ih = Parameter(rng.uniform(-bound, bound, 3 * hidden))
        self.b_hh = Parameter(rng.uniform(-bound, bound, 3 * hidden))
        self.hidden = hidden

    def forward(self, x):
        seq = F.transpose(x, (2, 0, 1))
        h0 = Tensor(np.zeros((x.shape[0], self.hidden)))
        return F.gru_sequence(seq, h0, self.w_ih, self.w_hh, self.b_ih, self.b_hh)


class Adam:
    """Adam with L2-style weight decay folded into the gradient.

    ``groups`` is a list of ``(params, lr)`` pairs so encoder and head can run
    at different rates; frozen parameters (``trainable=False``) are skipped.
    """

    def __init__(self, groups, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8,
                 clip_norm=None):
        if isinstance(groups, list) and groups and isinstance(groups[0], Parameter):
            raise TypeError("pass [(params, lr), ...]")
        self.groups = [{"params": list(ps), "lr": float(lr)} for ps, lr in groups]
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = {}
        self._v = {}

    def active_params(self):
        return [p for grp in self.groups for p in grp["params"] if p.trainable]

    def step(self, grads):
        """``grads`` maps id(param) -> gradient array."""
        self.t += 1
        scale = 1.0
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for grp in self.groups:
            lr = grp["lr"]
            for p in grp["params"]:
                if not p.trainable or id(p) not in grads:
                    continue
                g = grads[id(p)] * scale + self.weight_decay * p.data
                m = self._m.get(id(p))
                if m is None:
                    m = np.zeros_like(p.data)
                    v = np.zeros_like(p.data)
                else:
                    v = self._v[id(p)]
                m = self.beta1 * m + (1 - self.beta1) * g
                v = self.beta2 * v + (1 - self.beta2) * g * g
                self._m[id(p)] = m
                self._v[id(p)] = v
                p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class ReduceLROnPlateau:
    """Multiply every group's lr by ``factor`` once ``patience`` consecutive
    epochs fail to improve on the best metric (lower is better)."""

    def __init__(self, optimizer, factor=0.5, patience=5, min_lr=0.0):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, metric):
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            for grp in self.optimizer.groups:
                grp["lr"] = max(grp["lr"] * self.factor, self.min_lr)
            self.bad_epochs = 0
            return True
        return False
