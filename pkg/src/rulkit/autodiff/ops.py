"""Differentiable primitives.

Each primitive computes its forward value with numpy and registers a vjp in
``VJP`` under the op name. The vjp receives the saved context and the
upstream gradient and returns one gradient per input.
"""
from __future__ import annotations

import numpy as np

from .tensor import VJP, NumericError, ShapeError, Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    return make_node("add", a.data + b.data, (a, b), (a.shape, b.shape))


VJP["add"] = lambda ctx, g: (_unbroadcast(g, ctx[0]), _unbroadcast(g, ctx[1]))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    return make_node("sub", a.data - b.data, (a, b), (a.shape, b.shape))


VJP["sub"] = lambda ctx, g: (_unbroadcast(g, ctx[0]), _unbroadcast(-g, ctx[1]))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)
    return make_node("mul", a.data * b.data, (a, b), (a.data, b.data))


def _mul_vjp(ctx, g):
    a, b = ctx
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


VJP["mul"] = _mul_vjp


def square(x: Tensor) -> Tensor:
    return make_node("square", x.data * x.data, (x,), x.data)


VJP["square"] = lambda x, g: (2.0 * x * g,)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_node("exp", out, (x,), out)


VJP["exp"] = lambda out, g: (g * out,)


# -- activations --------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    return make_node("relu", np.maximum(x.data, 0), (x,), x.data > 0)


VJP["relu"] = lambda mask, g: (g * mask,)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_node("tanh", out, (x,), out)


VJP["tanh"] = lambda out, g: (g * (1 - out * out),)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return make_node("sigmoid", out, (x,), out)


VJP["sigmoid"] = lambda out, g: (g * out * (1 - out),)


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax: non-finite input")
    out = _softmax(x.data, axis)
    return make_node("softmax", out, (x,), (out, axis))


def _softmax_vjp(ctx, g):
    s, axis = ctx
    return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)


VJP["softmax"] = _softmax_vjp


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node("clip", np.clip(x.data, lo, hi), (x,), inside)


VJP["clip"] = lambda inside, g: (g * inside,)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return make_node("matmul", np.matmul(a.data, b.data), (a, b), (a.data, b.data))


def _matmul_vjp(ctx, g):
    a, b = ctx
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


VJP["matmul"] = _matmul_vjp


def dense(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, kernel)
    return y if bias is None else add(y, bias)


# -- shape manipulation -------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return make_node("reshape", out, (x,), x.shape)


VJP["reshape"] = lambda shape, g: (g.reshape(shape),)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    return make_node("transpose", np.transpose(x.data, axes), (x,), axes)


VJP["transpose"] = lambda axes, g: (np.transpose(g, np.argsort(axes)),)


def getitem(x: Tensor, index) -> Tensor:
    return make_node("getitem", x.data[index], (x,), (x.shape, x.dtype, index))


def _getitem_vjp(ctx, g):
    shape, dtype, index = ctx
    out = np.zeros(shape, dtype=g.dtype)
    np.add.at(out, index, g)
    return (out,)


VJP["getitem"] = _getitem_vjp


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]
    return make_node("concat", out, tensors, (np.cumsum(sizes)[:-1], axis))


def _concat_vjp(ctx, g):
    splits, axis = ctx
    return tuple(np.split(g, splits, axis=axis))


VJP["concat"] = _concat_vjp


# -- reductions ---------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return make_node("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), (x.shape, axis, keepdims))


def _sum_vjp(ctx, g):
    shape, axis, keepdims = ctx
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape).copy(),)


VJP["sum"] = _sum_vjp


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    return make_node("mean", out, (x,), (x.shape, axis, keepdims, n))


def _mean_vjp(ctx, g):
    shape, axis, keepdims, n = ctx
    (gx,) = _sum_vjp((shape, axis, keepdims), g)
    return (gx / n,)


VJP["mean"] = _mean_vjp


def maxpool1d(x: Tensor, size: int = 2, axis: int = 1) -> Tensor:
    """Non-overlapping max pooling along ``axis``; a trailing partial window is dropped."""
    axis = axis % x.ndim
    n = x.shape[axis] // size
    if n == 0:
        raise ShapeError(f"maxpool1d: length {x.shape[axis]} shorter than pool size {size}")
    moved = np.moveaxis(x.data, axis, -1)[..., : n * size]
    blocks = moved.reshape(moved.shape[:-1] + (n, size))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return make_node("maxpool1d", np.moveaxis(out, -1, axis), (x,), (x.shape, axis, size, arg))


def _maxpool_vjp(ctx, g):
    shape, axis, size, arg = ctx
    gm = np.moveaxis(g, axis, -1)
    blocks = np.zeros(gm.shape + (size,), dtype=g.dtype)
    np.put_along_axis(blocks, arg[..., None], gm[..., None], axis=-1)
    flat = blocks.reshape(gm.shape[:-1] + (-1,))
    full_len = shape[axis]
    if flat.shape[-1] < full_len:
        pad = [(0, 0)] * (flat.ndim - 1) + [(0, full_len - flat.shape[-1])]
        flat = np.pad(flat, pad)
    return (np.moveaxis(flat, -1, axis),)


VJP["maxpool1d"] = _maxpool_vjp


# -- layers with state or randomness -------------------------------------------

def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: dict,
    training: bool,
    momentum: float = 0.99,
    eps: float = 1e-3,
) -> Tensor:
    """Normalize over every axis but the last.

    ``state`` holds ``moving_mean`` / ``moving_var`` arrays, updated in place
    when ``training`` is true and used as the statistics otherwise.
    """
    if x.shape[-1] != gamma.shape[-1]:
        raise ShapeError(f"batchnorm: {x.shape[-1]} channels but gamma has shape {gamma.shape}")
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state["moving_mean"][...] = momentum * state["moving_mean"] + (1 - momentum) * mu
        state["moving_var"][...] = momentum * state["moving_var"] + (1 - momentum) * var
    else:
        mu = state["moving_mean"].astype(x.dtype)
        var = state["moving_var"].astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    return make_node("batchnorm", out, (x, gamma, beta), (xhat, inv, gamma.data, axes, training))


def _batchnorm_vjp(ctx, g):
    xhat, inv, gamma, axes, training = ctx
    dgamma = (g * xhat).sum(axis=axes)
    dbeta = g.sum(axis=axes)
    dxhat = g * gamma
    if training:
        m = np.prod([g.shape[a] for a in axes])
        dx = inv / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    else:
        dx = dxhat * inv
    return dx.astype(g.dtype), dgamma, dbeta


VJP["batchnorm"] = _batchnorm_vjp


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/keep at train time; identity otherwise."""
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
    return make_node("dropout", x.data * mask, (x,), mask)


VJP["dropout"] = lambda mask, g: (g * mask,)


# -- fused layers ---------------------------------------------------------------

def conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """'Same' zero-padded, stride-1 convolution of a B x L x C input with a K x C x M kernel."""
    k, c_in, m = kernel.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d: kernel width must be odd, got {k}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.shape[-1] != c_in or bias.shape != (m,):
        raise ShapeError(f"conv1d: input {x.shape}, kernel {kernel.shape}, bias {bias.shape}")
    half = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (half, half), (0, 0)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # B x L x C x K
    out = np.einsum("blck,kcm->blm", cols, kernel.data, optimize=True) + bias.data
    if squeeze:
        out = out[0]
    return make_node("conv1d", out, (x, kernel, bias), (cols, kernel.data, half, squeeze))


def _conv1d_vjp(ctx, g):
    cols, w, half, squeeze = ctx
    gb = g[None] if squeeze else g
    k = w.shape[0]
    dw = np.einsum("blck,blm->kcm", cols, gb, optimize=True)
    dcols = np.einsum("blm,kcm->blkc", gb, w, optimize=True)
    length = gb.shape[1]
    dxp = np.zeros((gb.shape[0], length + 2 * half, w.shape[1]), dtype=g.dtype)
    for j in range(k):
        dxp[:, j : j + length, :] += dcols[:, :, j, :]
    dx = dxp[:, half : half + length, :]
    if squeeze:
        dx = dx[0]
    return dx, dw.astype(g.dtype), gb.sum(axis=(0, 1))


VJP["conv1d"] = _conv1d_vjp


def lstm(
    x: Tensor,
    kernel: Tensor,
    recurrent: Tensor,
    bias: Tensor,
    reverse: bool = False,
    recurrent_mask: np.ndarray | None = None,
) -> Tensor:
    """One LSTM direction over a B x L x D sequence, zero initial state.

    Gate blocks in ``kernel``/``recurrent``/``bias`` are ordered (i, f, g, o).
    ``reverse`` runs from the last step to the first; outputs stay aligned
    with the input time axis. ``recurrent_mask`` (B x H) multiplies the
    previous hidden state before the recurrent product.
    """
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    b, length, d = xd.shape
    h4 = kernel.shape[-1]
    hdim = h4 // 4
    if kernel.shape != (d, h4) or recurrent.shape != (hdim, h4) or bias.shape != (h4,) or h4 % 4:
        raise ShapeError(
            f"lstm: input {x.shape}, kernel {kernel.shape}, recurrent {recurrent.shape}, bias {bias.shape}"
        )
    dtype = xd.dtype
    xw = np.matmul(xd, kernel.data) + bias.data
    u = recurrent.data
    h = np.zeros((b, hdim), dtype)
    c = np.zeros((b, hdim), dtype)
    out = np.zeros((b, length, hdim), dtype)
    steps = range(length - 1, -1, -1) if reverse else range(length)
    cache = []
    for t in steps:
        hm = h if recurrent_mask is None else h * recurrent_mask
        z = xw[:, t] + hm @ u
        i = _sigmoid(z[:, :hdim])
        f = _sigmoid(z[:, hdim : 2 * hdim])
        gg = np.tanh(z[:, 2 * hdim : 3 * hdim])
        o = _sigmoid(z[:, 3 * hdim :])
        c_prev = c
        c = f * c_prev + i * gg
        tc = np.tanh(c)
        h = o * tc
        out[:, t] = h
        cache.append((t, hm, i, f, gg, o, c_prev, tc))
    if squeeze:
        out = out[0]
    ctx = (xd, kernel.data, u, cache, recurrent_mask, squeeze)
    return make_node("lstm", out, (x, kernel, recurrent, bias), ctx)


def _lstm_vjp(ctx, g):
    xd, w, u, cache, mask, squeeze = ctx
    gd = g[None] if squeeze else g
    b, length, _ = xd.shape
    hdim = u.shape[0]
    dxw = np.zeros((b, length, 4 * hdim), dtype=g.dtype)
    du = np.zeros_like(u)
    dh_next = np.zeros((b, hdim), g.dtype)
    dc_next = np.zeros((b, hdim), g.dtype)
    for t, hm, i, f, gg, o, c_prev, tc in reversed(cache):
        dh = gd[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1 - tc * tc) + dc_next
        di = dc * gg
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o)], axis=1
        )
        dxw[:, t] = dz
        du += hm.T @ dz
        dhm = dz @ u.T
        dh_next = dhm if mask is None else dhm * mask
    dx = np.matmul(dxw, w.T)
    dw = xd.reshape(-1, xd.shape[-1]).T @ dxw.reshape(-1, 4 * hdim)
    dbias = dxw.sum(axis=(0, 1))
    if squeeze:
        dx = dx[0]
    return dx, dw, du, dbias


VJP["lstm"] = _lstm_vjp


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: Q {q.shape}, K {k.shape}, V {v.shape}")
    d_k = q.shape[-1]
    kt = transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = mul(matmul(q, kt), 1.0 / np.sqrt(d_k))
    return matmul(softmax(scores, axis=-1), v)


def check_finite(x: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"non-finite activation in {where}")
    return x
