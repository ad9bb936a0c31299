"""Differentiable primitives.

Every op returns a new :class:`Tensor`; the attached closure maps the output
cotangent to one cotangent per parent (``None`` where ``needs`` is false).
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_node


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(op, a, b, fn):
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}(#{a.nid},#{b.nid})",
                         f"cannot broadcast {a.shape} with {b.shape}") from None
    return a, b, fn(a.data, b.data)


# --------------------------------------------------------------- elementwise

def add(a, b):
    a, b, out = _binary("add", a, b, np.add)

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)
    return make_node("add", out, (a, b), vjp)


def sub(a, b):
    a, b, out = _binary("sub", a, b, np.subtract)

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None)
    return make_node("sub", out, (a, b), vjp)


def mul(a, b):
    a, b, out = _binary("mul", a, b, np.multiply)

    def vjp(g, needs):
        return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
                _unbroadcast(g * a.data, b.shape) if needs[1] else None)
    return make_node("mul", out, (a, b), vjp)


def div(a, b):
    a, b, out = _binary("div", a, b, np.divide)

    def vjp(g, needs):
        return (_unbroadcast(g / b.data, a.shape) if needs[0] else None,
                _unbroadcast(-g * a.data / b.data ** 2, b.shape) if needs[1] else None)
    return make_node("div", out, (a, b), vjp)


def neg(a):
    a = as_tensor(a)
    return make_node("neg", -a.data, (a,), lambda g, needs: (-g,))


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out = a.data ** p
    return make_node("pow", out, (a,), lambda g, needs: (g * p * a.data ** (p - 1),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node("exp", out, (a,), lambda g, needs: (g * out,))


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return make_node("log", out, (a,), lambda g, needs: (g / a.data,))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return make_node("relu", a.data * mask, (a,), lambda g, needs: (g * mask,))


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_node("sigmoid", out, (a,), lambda g, needs: (g * out * (1.0 - out),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node("tanh", out, (a,), lambda g, needs: (g * (1.0 - out ** 2),))


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ----------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def vjp(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return make_node("sum", np.asarray(out, dtype=np.float64), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.shape[i] for i in np.atleast_1d(axis)])
    return div(sum(a, axis=axis, keepdims=keepdims), float(count))


# ------------------------------------------------------------------- shaping

def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(a.label, f"cannot reshape {a.shape} to {shape}") from None
    return make_node("reshape", out, (a,), lambda g, needs: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    out = np.transpose(a.data, axes)
    return make_node("transpose", out, (a,), lambda g, needs: (np.transpose(g, inv),))


def getitem(a, idx):
    a = as_tensor(a)
    out = np.array(a.data[idx], dtype=np.float64)

    def vjp(g, needs):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)
    return make_node("getitem", out, (a,), vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", str(exc)) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g, needs):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) if n else None
                     for lo, hi, n in zip(bounds[:-1], bounds[1:], needs))
    return make_node("concat", out, tuple(tensors), vjp)


# -------------------------------------------------------------------- linear

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul(#{a.nid},#{b.nid})",
                         f"incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g, needs):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if needs[1]:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return make_node("matmul", out, (a, b), vjp)


def _conv_pads(kernel, dilation, padding):
    span = dilation * (kernel - 1)
    if padding == "same":
        return span // 2, span - span // 2
    if padding == "causal":
        return span, 0
    if padding == "valid":
        return 0, 0
    p = int(padding)
    return p, p


def conv1d(x, w, b=None, stride=1, dilation=1, padding="same"):
    """1-D convolution (cross-correlation) over the last axis.

    x: (N, C_in, T); w: (C_out, C_in, k); b: (C_out,). Zero padding.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d(#{x.nid},#{w.nid})",
                         f"input {x.shape} incompatible with kernel {w.shape}")
    n, cin, t = x.shape
    cout, _, k = w.shape
    left, right = _conv_pads(k, dilation, padding)
    tp = t + left + right
    span = dilation * (k - 1)
    if tp - span < 1:
        raise ShapeError(f"conv1d(#{x.nid},#{w.nid})",
                         f"length {t} too short for kernel {k} dilation {dilation}")
    tout = (tp - span - 1) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if (left or right) else x.data
    stop = stride * (tout - 1) + 1
    cols = np.stack([xp[:, :, j * dilation:j * dilation + stop:stride] for j in range(k)],
                    axis=2)  # (N, C_in, k, T_out)
    out = np.einsum("nckt,ock->not", cols, w.data, optimize=True)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None]
        parents = (x, w, b)

    def vjp(g, needs):
        gx = gw = gb = None
        if needs[0]:
            gcols = np.einsum("not,ock->nckt", g, w.data, optimize=True)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, :, j * dilation:j * dilation + stop:stride] += gcols[:, :, j, :]
            gx = gxp[:, :, left:left + t]
        if needs[1]:
            gw = np.einsum("not,nckt->ock", g, cols, optimize=True)
        if len(needs) > 2 and needs[2]:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb)[:len(parents)]
    return make_node("conv1d", out, parents, vjp)


# ------------------------------------------------------------------- pooling

def avg_pool1d(x, size):
    x = as_tensor(x)
    n, c, t = x.shape
    tout = t // size
    if tout < 1:
        raise ShapeError(x.label, f"length {t} shorter than pool size {size}")
    out = x.data[:, :, :tout * size].reshape(n, c, tout, size).mean(axis=3)

    def vjp(g, needs):
        full = np.zeros_like(x.data)
        full[:, :, :tout * size] = np.repeat(g / size, size, axis=2)
        return (full,)
    return make_node("avg_pool1d", out, (x,), vjp)


def max_pool1d(x, size):
    x = as_tensor(x)
    n, c, t = x.shape
    tout = t // size
    if tout < 1:
        raise ShapeError(x.label, f"length {t} shorter than pool size {size}")
    windows = x.data[:, :, :tout * size].reshape(n, c, tout, size)
    arg = windows.argmax(axis=3)
    out = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]

    def vjp(g, needs):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=3)
        full = np.zeros_like(x.data)
        full[:, :, :tout * size] = gw.reshape(n, c, tout * size)
        return (full,)
    return make_node("max_pool1d", out, (x,), vjp)


def upsample1d(x, factor):
    """Nearest-neighbour repeat along the last axis."""
    x = as_tensor(x)
    out = np.repeat(x.data, factor, axis=-1)

    def vjp(g, needs):
        return (g.reshape(*g.shape[:-1], -1, factor).sum(axis=-1),)
    return make_node("upsample1d", out, (x,), vjp)


# ------------------------------------------------------------------ recurrent

def _gru_gates(gi, h, w_hh, b_hh):
    """GRU step from precomputed input projections ``gi = x W_ih + b_ih``."""
    hid = h.shape[-1]
    gh = h @ w_hh + b_hh
    r = _sigmoid(gi[:, :hid] + gh[:, :hid])
    z = _sigmoid(gi[:, hid:2 * hid] + gh[:, hid:2 * hid])
    hn = gh[:, 2 * hid:]
    n = np.tanh(gi[:, 2 * hid:] + r * hn)
    h_new = (1.0 - z) * n + z * h
    return h_new, (r, z, n, hn)


def _gru_gates_backward(g, h, w_hh, cache):
    """Returns (d gi, d h, d gh) for one step."""
    r, z, n, hn = cache
    dn = g * (1.0 - z)
    dz = g * (h - n)
    dpre_n = dn * (1.0 - n ** 2)
    dpre_r = dpre_n * hn * r * (1.0 - r)
    dpre_z = dz * z * (1.0 - z)
    dgi = np.concatenate([dpre_r, dpre_z, dpre_n], axis=1)
    dgh = np.concatenate([dpre_r, dpre_z, dpre_n * r], axis=1)
    return dgi, dgh @ w_hh.T + g * z, dgh


def _gru_forward(x, h, w_ih, w_hh, b_ih, b_hh):
    return _gru_gates(x @ w_ih + b_ih, h, w_hh, b_hh)


def _gru_backward(g, x, h, w_ih, w_hh, cache):
    dgi, dh, dgh = _gru_gates_backward(g, h, w_hh, cache)
    return dgi @ w_ih.T, dh, x.T @ dgi, h.T @ dgh, dgi.sum(axis=0), dgh.sum(axis=0)


def _check_gru(op, x, h, w_ih, w_hh, b_ih, b_hh):
    hid = h.shape[-1]
    ok = (x.ndim == 2 and h.ndim == 2 and x.shape[0] == h.shape[0]
          and w_ih.shape == (x.shape[1], 3 * hid) and w_hh.shape == (hid, 3 * hid)
          and b_ih.shape == (3 * hid,) and b_hh.shape == (3 * hid,))
    if not ok:
        raise ShapeError(op, f"x {x.shape}, h {h.shape}, W_ih {w_ih.shape}, "
                             f"W_hh {w_hh.shape}, b_ih {b_ih.shape}, b_hh {b_hh.shape}")


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    """One GRU step with update/reset gates and a tanh candidate.

    Gate blocks are packed as [reset | update | candidate] along the last
    axis of the weight matrices.
    """
    x, h, w_ih, w_hh, b_ih, b_hh = map(as_tensor, (x, h, w_ih, w_hh, b_ih, b_hh))
    _check_gru("gru_cell", x.data, h.data, w_ih.data, w_hh.data, b_ih.data, b_hh.data)
    out, cache = _gru_forward(x.data, h.data, w_ih.data, w_hh.data, b_ih.data, b_hh.data)

    def vjp(g, needs):
        return _gru_backward(g, x.data, h.data, w_ih.data, w_hh.data, cache)
    return make_node("gru_cell", out, (x, h, w_ih, w_hh, b_ih, b_hh), vjp)


def gru_sequence(xs, h0, w_ih, w_hh, b_ih, b_hh):
    """Run :func:`gru_cell` over xs of shape (T, N, I); returns the final state.

    Fused into a single tape node so long sequences do not create T nodes.
    """
    xs, h0, w_ih, w_hh, b_ih, b_hh = map(as_tensor, (xs, h0, w_ih, w_hh, b_ih, b_hh))
    if xs.ndim != 3:
        raise ShapeError(xs.label, f"expected (T, N, I) sequence, got {xs.shape}")
    _check_gru("gru_sequence", xs.data[0], h0.data, w_ih.data, w_hh.data,
               b_ih.data, b_hh.data)
    xs_c = np.ascontiguousarray(xs.data)
    gis = xs_c @ w_ih.data + b_ih.data
    states = [h0.data]
    caches = []
    for t in range(xs.shape[0]):
        h_new, cache = _gru_gates(gis[t], states[-1], w_hh.data, b_hh.data)
        states.append(h_new)
        caches.append(cache)

    def vjp(g, needs):
        dgis = np.empty_like(gis)
        dghs = np.empty_like(gis)
        dh = g
        for t in reversed(range(xs.shape[0])):
            dgis[t], dh, dghs[t] = _gru_gates_backward(dh, states[t], w_hh.data, caches[t])
        hs = np.stack(states[:-1])
        flat_gi = dgis.reshape(-1, dgis.shape[-1])
        dxs = dgis @ w_ih.data.T
        dw_ih = xs_c.reshape(-1, xs_c.shape[-1]).T @ flat_gi
        dw_hh = hs.reshape(-1, hs.shape[-1]).T @ dghs.reshape(-1, dghs.shape[-1])
        return dxs, dh, dw_ih, dw_hh, dgis.sum(axis=(0, 1)), dghs.sum(axis=(0, 1))
    return make_node("gru_sequence", states[-1], (xs, h0, w_ih, w_hh, b_ih, b_hh), vjp)


# -------------------------------------------------------- softmax and losses

def _softmax_np(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax_np(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(a, axis=-1):
    a = as_tensor(a)
    s = _softmax_np(a.data, axis)

    def vjp(g, needs):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return make_node("softmax", s, (a,), vjp)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    out = _log_softmax_np(a.data, axis)
    s = np.exp(out)

    def vjp(g, needs):
        return (g - s * g.sum(axis=axis, keepdims=True),)
    return make_node("log_softmax", out, (a,), vjp)


def _reduce(per_sample, reduction):
    if reduction == "mean":
        return per_sample.mean(), 1.0 / per_sample.shape[0]
    if reduction == "sum":
        return per_sample.sum(), 1.0
    if reduction == "none":
        return per_sample, None
    raise ValueError(f"unknown reduction {reduction!r}")


def _scale_back(g, scale, n):
    if scale is None:
        return g.reshape(n, 1)
    return np.full((n, 1), float(g) * scale)


def cross_entropy(logits, target, reduction="mean"):
    """Softmax cross-entropy. ``target`` is an int label vector or a
    probability matrix with the same shape as ``logits``."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(logits.label, f"logits must be (N, C), got {logits.shape}")
    n, c = logits.shape
    target = np.asarray(target)
    if target.ndim == 1:
        if target.shape[0] != n:
            raise ShapeError(logits.label, f"{target.shape[0]} labels for {n} rows")
        onehot = np.zeros((n, c))
        onehot[np.arange(n), target.astype(int)] = 1.0
    else:
        if target.shape != logits.shape:
            raise ShapeError(logits.label, f"target {target.shape} vs logits {logits.shape}")
        onehot = target.astype(np.float64)
    logp = _log_softmax_np(logits.data)
    per_sample = -(onehot * logp).sum(axis=1)
    out, scale = _reduce(per_sample, reduction)

    def vjp(g, needs):
        return ((np.exp(logp) - onehot) * _scale_back(g, scale, n),)
    return make_node("cross_entropy", np.asarray(out), (logits,), vjp)


def kl_div_softmax(p_logits, q_logits, reduction="mean"):
    """KL(softmax(p_logits) || softmax(q_logits)) per row."""
    p_logits, q_logits = as_tensor(p_logits), as_tensor(q_logits)
    if p_logits.shape != q_logits.shape or p_logits.ndim != 2:
        raise ShapeError(f"kl(#{p_logits.nid},#{q_logits.nid})",
                         f"{p_logits.shape} vs {q_logits.shape}")
    n = p_logits.shape[0]
    logp = _log_softmax_np(p_logits.data)
    logq = _log_softmax_np(q_logits.data)
    p = np.exp(logp)
    u = logp - logq
    per_sample = (p * u).sum(axis=1)
    out, scale = _reduce(per_sample, reduction)

    def vjp(g, needs):
        gs = _scale_back(g, scale, n)
        gp = p * (u - per_sample[:, None]) * gs if needs[0] else None
        gq = (np.exp(logq) - p) * gs if needs[1] else None
        return gp, gq
    return make_node("kl_div_softmax", np.asarray(out), (p_logits, q_logits), vjp)


def mse_loss(pred, target):
    """Mean squared error over all elements; ``target`` may be a tensor."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse(#{pred.nid},#{target.nid})",
                         f"{pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = np.asarray(np.mean(diff ** 2))

    def vjp(g, needs):
        d = 2.0 * diff * (float(g) / diff.size)
        return (d if needs[0] else None, -d if needs[1] else None)
    return make_node("mse_loss", out, (pred, target), vjp)


def softmax_np(x, axis=-1):
    """Plain numpy softmax for inference paths."""
    return _softmax_np(np.asarray(x, dtype=np.float64), axis)


__all__ = [
    "Tensor", "add", "sub", "mul", "div", "neg", "power", "exp", "log", "relu",
    "sigmoid", "tanh", "sum", "mean", "reshape", "transpose", "getitem", "concat",
    "matmul", "conv1d", "avg_pool1d", "max_pool1d", "upsample1d", "gru_cell",
    "gru_sequence", "softmax", "log_softmax", "cross_entropy", "kl_div_softmax",
    "mse_loss", "softmax_np",
]
