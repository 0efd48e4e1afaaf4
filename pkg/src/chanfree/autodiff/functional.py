"""Differentiable operations.

Only the layer set the channel-free models need is provided: elementwise
arithmetic, reductions, reshaping, 1D convolution, batch/layer normalization,
affine maps, embedding lookup, softmax and cross-entropy.
"""

from __future__ import annotations

import numpy as np

from chanfree.autodiff.tensor import Tensor, as_tensor, make_node
from chanfree.errors import ConfigurationError, InputError, NumericError


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_input(x: np.ndarray):
    if not np.isfinite(x).all():
        raise NumericError("non-finite input")


# -- elementwise ---------------------------------------------------------

def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Tensors for a binary op; a plain constant takes the other operand's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))
    return make_node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))
    return make_node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape), copy=False)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape), copy=False)
    return make_node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))
    return make_node(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: x._accumulate(g * mask, copy=False), check_finite=False)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: x._accumulate(g * (1.0 - out * out), copy=False), check_finite=False)


# -- shape and reductions ------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: x._accumulate(g.reshape(old)), check_finite=False)


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_node(x.data.transpose(axes), (x,), lambda g: x._accumulate(g.transpose(inv)),
                     check_finite=False)


def getitem(x: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x._accumulate(full)
    return make_node(x.data[idx], (x,), backward, check_finite=False)


def take_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    """Gather along axis 0; repeated rows accumulate their gradients."""
    rows = np.asarray(rows, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, rows, g)
        x._accumulate(full)
    return make_node(x.data[rows], (x,), backward, check_finite=False)


def scatter_rows(x: Tensor, rows: np.ndarray, n_rows: int) -> Tensor:
    """Place the rows of ``x`` at positions ``rows`` of a zero array of length ``n_rows``."""
    rows = np.asarray(rows, dtype=np.intp)
    out = np.zeros((n_rows,) + x.shape[1:], dtype=x.dtype)
    out[rows] = x.data
    return make_node(out, (x,), lambda g: x._accumulate(g[rows]), check_finite=False)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(np.ascontiguousarray(part))
    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward,
                     check_finite=False)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())
    return make_node(out, (x,), backward, check_finite=False)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``(n, i, j) @ (n, j, k)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ConfigurationError(f"bmm shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.transpose(0, 2, 1))
        if b.requires_grad:
            b._accumulate(a.data.transpose(0, 2, 1) @ g)
    return make_node(a.data @ b.data, (a, b), backward)


# -- layers --------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: ``x @ weight.T + bias``."""
    x = as_tensor(x)
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ConfigurationError(f"linear expects last dim {d_in}, got {x.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    out = x2 @ weight.data.T
    if bias is not None:
        if bias.shape != (d_out,):
            raise ConfigurationError(f"bias shape {bias.shape} != ({d_out},)")
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, d_out)
        if x.requires_grad:
            x._accumulate((g2 @ weight.data).reshape(x.shape), copy=False)
        if weight.requires_grad:
            weight._accumulate(g2.T @ x2, copy=False)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out.reshape(lead + (d_out,)), parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis.

    ``x`` is ``(n, ch_in, l)`` and ``weight`` is ``(ch_out, ch_in, k)``. Output
    length is ``(l + 2*padding - k) // stride + 1``.
    """
    x = as_tensor(x)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ConfigurationError(f"conv1d shape mismatch: input {x.shape}, weight {weight.shape}")
    _check_input(x.data)
    n, c_in, length = x.shape
    c_out, _, k = weight.shape
    l_out = (length + 2 * padding - k) // stride + 1
    if l_out < 1:
        raise ConfigurationError(f"input length {length} too short for kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    span = stride * (l_out - 1) + 1
    # cols[c, j, n, t] = xp[n, c, t*stride + j]; one large GEMM beats n small ones
    cols = np.empty((c_in, k, n, l_out), dtype=xp.dtype)
    for j in range(k):
        cols[:, j] = xp[:, :, j:j + span:stride].transpose(1, 0, 2)
    cols = cols.reshape(c_in * k, n * l_out)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(c_out, n, l_out).transpose(1, 0, 2))

    def backward(g):
        g_t = g.transpose(1, 0, 2).reshape(c_out, n * l_out)
        if weight.requires_grad:
            weight._accumulate((g_t @ cols.T).reshape(weight.shape), copy=False)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g_t.sum(axis=1), copy=False)
        if x.requires_grad:
            dcols = (w2.T @ g_t).reshape(c_in, k, n, l_out)
            dxp = np.zeros(xp.shape, dtype=xp.dtype)
            for j in range(k):
                dxp[:, :, j:j + span:stride] += dcols[:, j].transpose(1, 0, 2)
            x._accumulate(dxp[:, :, padding:padding + length] if padding else dxp, copy=bool(padding))
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mean: np.ndarray | None = None,
               var: np.ndarray | None = None, eps: float = 1e-5):
    """Normalize ``(n, ch, l)`` per channel.

    With ``mean``/``var`` omitted the batch statistics over ``(n, l)`` are used
    and returned alongside the output so the caller can update running
    estimates. Returns ``(out, batch_mean, batch_var)``.
    """
    x = as_tensor(x)
    if x.ndim != 3 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ConfigurationError(f"batch_norm shape mismatch: input {x.shape}, gamma {gamma.shape}")
    _check_input(x.data)
    batch_stats = mean is None
    count = x.shape[0] * x.shape[2]
    if batch_stats:
        if count < 2:
            raise ConfigurationError("batch_norm in train mode needs at least 2 values per channel")
        mu = x.data.mean(axis=(0, 2))
        xhat = x.data - mu[None, :, None]
        var = (xhat * xhat).mean(axis=(0, 2))
    else:
        mu = np.asarray(mean, dtype=x.dtype)
        var = np.asarray(var, dtype=x.dtype)
        xhat = x.data - mu[None, :, None]
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat *= inv[None, :, None]
    out = xhat * gamma.data[None, :, None]
    out += beta.data[None, :, None]

    def backward(g):
        sum_g = g.sum(axis=(0, 2))
        sum_gx = (g * xhat).sum(axis=(0, 2))
        if gamma.requires_grad:
            gamma._accumulate(sum_gx, copy=False)
        if beta.requires_grad:
            beta._accumulate(sum_g, copy=True)
        if x.requires_grad:
            a = gamma.data * inv
            if batch_stats:
                dx = g * a[None, :, None]
                dx -= xhat * (a * sum_gx / count)[None, :, None]
                dx -= (a * sum_g / count)[None, :, None]
            else:
                dx = g * a[None, :, None]
            x._accumulate(dx, copy=False)
    return make_node(out, (x, gamma, beta), backward), mu, var


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = as_tensor(x)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ConfigurationError(f"layer_norm expects affine params of shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=lead))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=lead))
        if x.requires_grad:
            gx = g * gamma.data
            x._accumulate((gx - gx.mean(axis=-1, keepdims=True)
                           - xhat * (gx * xhat).mean(axis=-1, keepdims=True)) * inv)
    return make_node(out, (x, gamma, beta), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup; the gradient scatters back into the looked-up rows only."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise InputError("embedding ids must be integers")
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise InputError(f"embedding id out of range [0, {n_rows})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(full)
    return make_node(table.data[ids], (table,), backward, check_finite=False)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))
    return make_node(out, (x,), backward)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels, weights: np.ndarray | None = None) -> Tensor:
    """Cross-entropy of integer ``labels`` under ``softmax(logits)``.

    Without ``weights`` the per-row losses are averaged. With ``weights`` the
    result is ``sum(weights * loss_rows)``; callers pass normalized weights.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ConfigurationError(f"logits must be 2-D, got {logits.shape}")
    n, n_cls = logits.shape
    if labels.shape != (n,) or labels.dtype.kind not in "iu":
        raise InputError("labels must be an integer vector matching the logits batch")
    if n and (labels.min() < 0 or labels.max() >= n_cls):
        raise InputError(f"label out of range [0, {n_cls})")
    _check_input(logits.data)
    w = np.full(n, 1.0 / n, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -(w * logp[rows, labels]).sum()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        logits._accumulate(g * w[:, None] * p)
    return make_node(np.asarray(loss), (logits,), backward)
