"""Finite-difference cases for every primitive op and one model per family.

Each builder takes a generator and returns ``(graph, inputs)`` where the
graph output is a scalar: the op's output contracted with fixed random
weights, so every output element contributes to the gradient.
"""

import numpy as np

from csirobust.autograd import Graph, Tensor, finite_diff_check
from csirobust.autograd import functional as F
from csirobust.models import ModelSpec, build_model


def _away_from_zero(rng, shape, low=0.1):
    x = rng.uniform(low, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape):
    """Values that are pairwise at least 0.05 apart (no max-pool ties)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.05 - n * 0.025).reshape(shape)


def _contract(fn, out_shape, rng):
    w = Tensor(rng.standard_normal(out_shape))

    def g(**kw):
        out = fn(**kw)
        return F.sum(out * w) if out.shape != () else out
    return g


def _unary(op, make=None, shape=(3, 4)):
    def build(rng):
        x = (make or (lambda r, s: r.standard_normal(s)))(rng, shape)
        out_shape = op(Tensor(x)).shape
        return Graph(_contract(lambda x: op(x), out_shape, rng)), {"x": x}
    return build


def _binary(op, make_b=None, shape_a=(3, 4), shape_b=(3, 4)):
    def build(rng):
        a = rng.standard_normal(shape_a)
        b = (make_b or (lambda r, s: r.standard_normal(s)))(rng, shape_b)
        out_shape = op(Tensor(a), Tensor(b)).shape
        return Graph(_contract(lambda a, b: op(a, b), out_shape, rng)), {"a": a, "b": b}
    return build


def _conv(stride, dilation, padding):
    def build(rng):
        x = rng.standard_normal((2, 3, 11))
        w = rng.standard_normal((4, 3, 3))
        b = rng.standard_normal(4)
        op = lambda x, w, b: F.conv1d(x, w, b, stride, dilation, padding)  # noqa: E731
        shape = op(Tensor(x), Tensor(w), Tensor(b)).shape
        return Graph(_contract(op, shape, rng)), {"x": x, "w": w, "b": b}
    return build


def _gru(sequence):
    def build(rng):
        n, i, hid, t = 2, 3, 4, 5
        inputs = {
            "x": rng.standard_normal((t, n, i) if sequence else (n, i)),
            "h": rng.standard_normal((n, hid)) * 0.5,
            "w_ih": rng.standard_normal((i, 3 * hid)) * 0.5,
            "w_hh": rng.standard_normal((hid, 3 * hid)) * 0.5,
            "b_ih": rng.standard_normal(3 * hid) * 0.1,
            "b_hh": rng.standard_normal(3 * hid) * 0.1,
        }
        cell = F.gru_sequence if sequence else F.gru_cell

        def op(x, h, w_ih, w_hh, b_ih, b_hh):
            return cell(x, h, w_ih, w_hh, b_ih, b_hh)
        return Graph(_contract(op, (n, hid), rng)), inputs
    return build


def _ce_labels(rng):
    logits = rng.standard_normal((5, 4))
    y = rng.integers(0, 4, 5)
    return Graph(lambda z: F.cross_entropy(z, y)), {"z": logits}


def _ce_soft(rng):
    logits = rng.standard_normal((5, 4))
    p = rng.dirichlet(np.ones(4), size=5)
    return Graph(lambda z: F.cross_entropy(z, p, reduction="sum")), {"z": logits}


def _kl(rng):
    return (Graph(lambda p, q: F.kl_div_softmax(p, q)),
            {"p": rng.standard_normal((4, 3)), "q": rng.standard_normal((4, 3))})


def _mse(rng):
    return (Graph(lambda a, b: F.mse_loss(a, b)),
            {"a": rng.standard_normal((3, 5)), "b": rng.standard_normal((3, 5))})


PRIMITIVES = {
    "add": _binary(lambda a, b: a + b, shape_b=(4,)),
    "sub": _binary(lambda a, b: a - b),
    "mul": _binary(lambda a, b: a * b, shape_b=(1, 4)),
    "div": _binary(lambda a, b: a / b, make_b=lambda r, s: _away_from_zero(r, s, 0.5)),
    "neg": _unary(lambda x: -x),
    "power": _unary(lambda x: F.power(x, 3)),
    "exp": _unary(F.exp),
    "log": _unary(F.log, make=lambda r, s: r.uniform(0.5, 2.0, s)),
    "relu": _unary(F.relu, make=_away_from_zero),
    "sigmoid": _unary(F.sigmoid),
    "tanh": _unary(F.tanh),
    "sum": _unary(lambda x: F.sum(x, axis=1)),
    "mean": _unary(lambda x: F.mean(x, axis=0, keepdims=True)),
    "reshape": _unary(lambda x: F.reshape(x, (2, 6))),
    "transpose": _unary(lambda x: F.transpose(x, (1, 0))),
    "getitem": _unary(lambda x: F.getitem(x, (slice(None), slice(1, 3)))),
    "concat": _binary(lambda a, b: F.concat([a, b], axis=1)),
    "matmul": _binary(F.matmul, shape_a=(3, 4), shape_b=(4, 2)),
    "matmul_batched": _binary(F.matmul, shape_a=(2, 3, 4), shape_b=(4, 5)),
    "conv1d_same": _conv(1, 1, "same"),
    "conv1d_strided_dilated": _conv(2, 2, "same"),
    "conv1d_causal": _conv(1, 2, "causal"),
    "avg_pool1d": _unary(lambda x: F.avg_pool1d(x, 2), shape=(2, 3, 8)),
    "max_pool1d": _unary(lambda x: F.max_pool1d(x, 2), make=_distinct, shape=(2, 3, 8)),
    "upsample1d": _unary(lambda x: F.upsample1d(x, 2), shape=(2, 3, 4)),
    "gru_cell": _gru(False),
    "gru_sequence": _gru(True),
    "softmax": _unary(F.softmax),
    "log_softmax": _unary(F.log_softmax),
    "cross_entropy": _ce_labels,
    "cross_entropy_soft": _ce_soft,
    "kl_div_softmax": _kl,
    "mse_loss": _mse,
}

# small but complete instances of every model family
MODEL_SPECS = {
    "large-cnn": ModelSpec("large-cnn", (2, 4, 16), 3, width=4, depth=3, seed=1),
    "large-gru": ModelSpec("large-gru", (2, 4, 8), 3, width=6, seed=1),
    "tiny-tcn-head": ModelSpec("tiny-tcn-head", (2, 4, 8), 3, width=6, latent_dim=3,
                               head_width=5, seed=1),
    "tiny-gru-head": ModelSpec("tiny-gru-head", (2, 4, 8), 3, width=6, latent_dim=3,
                               head_width=5, seed=1),
}


def model_case(family, rng):
    spec = MODEL_SPECS[family]
    net = build_model(spec)
    X = rng.standard_normal((3,) + spec.input_dims)
    y = rng.integers(0, spec.n_classes, 3)
    params = dict(net.named_parameters())
    keys = {name: f"p{i}" for i, name in enumerate(params)}

    def fn(x, **kw):
        return F.cross_entropy(net(x), y)
    graph = Graph(fn, {keys[n]: p for n, p in params.items()})
    return graph, {"x": X}


def check_primitive(name, trials=100, probes=2, seed=0, epsilon=1e-6):
    """Worst relative error over ``trials`` random points."""
    rng = np.random.default_rng([seed, len(name)] + [ord(c) for c in name])
    worst = 0.0
    for t in range(trials):
        graph, inputs = PRIMITIVES[name](rng)
        worst = max(worst, finite_diff_check(graph, inputs, epsilon=epsilon, probes=probes,
                                             seed=t))
    return worst


def check_model(family, probes=100, seed=0, epsilon=1e-6):
    """Input and parameter gradients of a full model (directional probes)."""
    rng = np.random.default_rng([seed] + [ord(c) for c in family])
    graph, inputs = model_case(family, rng)
    worst = finite_diff_check(graph, inputs, wrt="x", epsilon=epsilon, probes=probes, seed=seed)
    # a few probes on each parameter tensor
    for name in graph.params:
        worst = max(worst, finite_diff_check(graph, inputs, wrt=name, epsilon=epsilon,
                                             probes=3, seed=seed))
    return worst
