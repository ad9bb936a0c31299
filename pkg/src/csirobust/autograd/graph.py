"""Named-input wrapper around the tape: evaluate, backward, gradient checks."""

from __future__ import annotations

import inspect
from collections.abc import Mapping

import numpy as np

from .tensor import Tensor, grad, no_grad


class Graph:
    """An immutable forward function plus its named parameter tensors.

    ``fn`` is called with every free input and every parameter as keyword
    arguments and must return a single :class:`Tensor`.
    """

    def __init__(self, fn, params=None):
        self.fn = fn
        self.params = dict(params or {})
        names = [p.name for p in inspect.signature(fn).parameters.values()
                 if p.kind in (p.POSITIONAL_OR_KEYWORD, p.KEYWORD_ONLY)
                 and p.default is inspect.Parameter.empty]
        self.input_names = tuple(n for n in names if n not in self.params)

    def __repr__(self):
        return f"Graph(inputs={self.input_names}, params={tuple(self.params)})"


def evaluate(graph: Graph, inputs: Mapping) -> Tensor:
    """Run the forward pass; the returned tensor carries the activation tape.

    Each call records into its own tape, so concurrent calls on one graph do
    not share state.
    """
    missing = [n for n in graph.input_names if n not in inputs]
    if missing:
        raise ValueError(f"unbound graph inputs: {missing}")
    bound = {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad=True, name=k)
             for k, v in inputs.items()}
    out = graph.fn(**bound, **graph.params)
    if not isinstance(out, Tensor):
        raise TypeError(f"graph function returned {type(out).__name__}, not Tensor")
    out.bindings = {**graph.params, **bound}
    return out


def backward(output: Tensor, wrt=None, seed=None) -> dict:
    """Gradients of ``output`` w.r.t. named inputs/parameters.

    ``wrt`` may be a list of names (resolved through the evaluation), a
    mapping of name to tensor, or ``None`` for every bound tensor.
    """
    if isinstance(wrt, Mapping):
        named = dict(wrt)
    else:
        bindings = output.bindings or {}
        names = list(bindings) if wrt is None else list(wrt)
        unknown = [n for n in names if n not in bindings]
        if unknown:
            raise KeyError(f"no bound tensor named {unknown}")
        named = {n: bindings[n] for n in names}
    grads = grad(output, list(named.values()), seed=seed)
    return dict(zip(named, grads))


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_diff_check(graph: Graph, inputs: Mapping, wrt=None, epsilon=1e-6,
                      probes=None, seed=0):
    """Max relative error between backward and central differences.

    With ``probes=None`` every scalar entry of each checked tensor is
    perturbed. With an integer, that many random unit directions are drawn
    and directional derivatives are compared instead (for large tensors).
    """
    values = {k: np.array(v.data if isinstance(v, Tensor) else v, dtype=np.float64)
              for k, v in inputs.items()}
    out = evaluate(graph, values)
    if out.data.size != 1:
        raise ValueError("finite_diff_check requires a scalar-output graph")
    names = list(values) if wrt is None else ([wrt] if isinstance(wrt, str) else list(wrt))
    analytic = backward(out, names)

    def f(name, arr):
        with no_grad():
            return evaluate(graph, {**values, name: arr}).item()

    worst = 0.0
    rng = np.random.default_rng(seed)
    for name in names:
        base = values.get(name)
        if base is None:
            base = graph.params[name].data
            f_named = _param_probe(graph, values, name)
        else:
            f_named = lambda arr, _n=name: f(_n, arr)  # noqa: E731
        g = analytic[name]
        if probes is None:
            numeric = np.zeros_like(base)
            for idx in np.ndindex(base.shape):
                plus, minus = base.copy(), base.copy()
                plus[idx] += epsilon
                minus[idx] -= epsilon
                numeric[idx] = (f_named(plus) - f_named(minus)) / (2 * epsilon)
            worst = max(worst, relative_error(g, numeric))
        else:
            for _ in range(int(probes)):
                v = rng.standard_normal(base.shape)
                v /= np.linalg.norm(v)
                num = (f_named(base + epsilon * v) - f_named(base - epsilon * v)) / (2 * epsilon)
                worst = max(worst, relative_error(np.sum(g * v), num))
    return worst


def _param_probe(graph, values, name):
    param = graph.params[name]
    original = param.data

    def f(arr):
        param.data = arr
        try:
            with no_grad():
                return evaluate(graph, values).item()
        finally:
            param.data = original
    return f
