"""Dense float64 tensors with a define-by-run reverse-mode tape."""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

_node_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Raised when an op receives incompatible input shapes."""

    def __init__(self, node, message):
        super().__init__(f"node {node}: {message}")
        self.node = node


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf appears in an input or intermediate value."""

    def __init__(self, node, message="non-finite value"):
        super().__init__(f"node {node}: {message}")
        self.node = node


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A node of the computation tape.

    Leaves are created by the user (inputs, parameters); interior nodes are
    produced by the functions in :mod:`csirobust.autograd.functional`.
    """

    __slots__ = ("data", "requires_grad", "op", "nid", "name", "bindings",
                 "_parents", "_vjp", "__weakref__")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        self.nid = next(_node_ids)
        self.op = "leaf"
        self.name = name
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(self.label, "non-finite input rejected")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.bindings = None
        self._parents = ()
        self._vjp = None

    @property
    def label(self):
        return f"{self.name or self.op}#{self.nid}"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor({self.label}, shape={self.shape})"

    # operator sugar; implementations live in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F
        return F.div(other, self)

    def __neg__(self):
        from . import functional as F
        return F.neg(self)

    def __pow__(self, p):
        from . import functional as F
        return F.power(self, p)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __getitem__(self, idx):
        from . import functional as F
        return F.getitem(self, idx)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        from . import functional as F
        return F.transpose(self)


class Parameter(Tensor):
    """Trainable leaf. ``trainable=False`` freezes it for optimizers."""

    __slots__ = ("trainable",)

    def __init__(self, data, name=None, trainable=True):
        super().__init__(data, requires_grad=True, name=name)
        self.trainable = trainable


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def make_node(op, data, parents, vjp):
    """Wrap an op result; records parents only when some parent needs grads."""
    out = Tensor.__new__(Tensor)
    out.nid = next(_node_ids)
    out.op = op
    out.name = None
    out.bindings = None
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}#{out.nid}")
    out.data = data
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt, seed=None):
    """Vector-Jacobian product of ``output`` with respect to ``wrt``.

    ``wrt`` is a sequence of tensors; a list of gradient arrays (same order)
    is returned. The tape is left untouched so several seeds may be pulled
    back through the same evaluation.
    """
    if seed is None:
        if output.data.size != 1:
            raise ValueError(
                f"output {output.label} has shape {output.shape}; a seed is "
                "required for non-scalar outputs")
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.shape:
            raise ShapeError(output.label, f"seed shape {seed.shape} != {output.shape}")
    wrt = list(wrt)
    results = {id(t): None for t in wrt}
    if not output.requires_grad:
        return [np.zeros_like(t.data) for t in wrt]

    order = _topo_order(output)
    relevant = set(results)
    for node in order:
        if id(node) not in relevant and any(id(p) in relevant for p in node._parents):
            relevant.add(id(node))

    grads = {id(output): seed}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if id(node) in results:
            results[id(node)] = g
        if node._vjp is None:
            continue
        needs = tuple(id(p) in relevant for p in node._parents)
        if not any(needs):
            continue
        pgrads = node._vjp(g, needs)
        for p, gp, need in zip(node._parents, pgrads, needs):
            if not need or gp is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + gp
            else:
                grads[key] = gp
    return [results[id(t)] if results[id(t)] is not None else np.zeros_like(t.data)
            for t in wrt]
