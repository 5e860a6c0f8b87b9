"""Minimal reverse-mode differentiation engine.

Supplies exactly the operators the enhancement network needs. Values are
time-major arrays of shape (T, C), optionally with a leading batch axis
(B, T, C); the time axis is always -2 and channels -1. Each forward pass
builds a single-use computation record that `backward` consumes.
"""

from __future__ import annotations

import numpy as np


class GraphConsumedError(RuntimeError):
    """Raised when backward touches an already-consumed computation record."""


class DiffTensor:
    __slots__ = ("values", "grad", "_parents", "_vjp", "_consumed")

    def __init__(self, values, _parents=(), _vjp=None):
        self.values = np.asarray(values)
        self.grad = None
        self._parents = tuple(_parents)
        self._vjp = _vjp
        self._consumed = False

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def is_leaf(self) -> bool:
        return not self._parents

    def detach(self) -> "DiffTensor":
        """A new leaf sharing this node's values; gradients stop here."""
        return DiffTensor(self.values)

    def item(self) -> float:
        return float(self.values)

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap_const(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def abs(self):
        return absolute(self)

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return reduce_mean(self)

    def __repr__(self):
        return f"DiffTensor(shape={self.values.shape}, dtype={self.values.dtype})"


class Parameter(DiffTensor):
    __slots__ = ("name", "trainable")

    def __init__(self, name: str, values, trainable: bool = True):
        super().__init__(values)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.values.shape})"


class BatchNormState:
    """Per-channel running statistics, updated in train mode."""

    __slots__ = ("mean", "var", "momentum")

    def __init__(self, channels: int, dtype=np.float64, momentum: float = 0.9):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def _wrap_const(value, dtype):
    return DiffTensor(np.asarray(value, dtype=dtype))


def _stacked_outer(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """sum over batch and time of x[..., t, :, None] * g[..., t, None, :]
    as a single GEMM."""
    c_in = x.shape[-1]
    c_out = g.shape[-1]
    return x.reshape(-1, c_in).T @ g.reshape(-1, c_out)


def _accumulate(node: DiffTensor, grad: np.ndarray):
    if node.grad is None:
        node.grad = np.zeros_like(node.values)
    node.grad += grad


def _node(values, parents, vjp) -> DiffTensor:
    return DiffTensor(values, _parents=parents, _vjp=vjp)


# -- basic elementwise ops ---------------------------------------------------


def add(a: DiffTensor, b) -> DiffTensor:
    if not isinstance(b, DiffTensor):
        b_val = np.asarray(b, dtype=a.dtype)
        if b_val.shape not in ((), a.values.shape):
            raise ValueError(f"constant shape {b_val.shape} != tensor shape {a.values.shape}")

        def vjp(g):
            _accumulate(a, g)

        return _node(a.values + b_val, (a,), vjp)

    if a.values.shape != b.values.shape:
        raise ValueError(f"shape mismatch in add: {a.values.shape} vs {b.values.shape}")

    def vjp(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(a.values + b.values, (a, b), vjp)


def sub(a: DiffTensor, b) -> DiffTensor:
    if not isinstance(b, DiffTensor):
        return add(a, -np.asarray(b, dtype=a.dtype))

    if a.values.shape != b.values.shape:
        raise ValueError(f"shape mismatch in sub: {a.values.shape} vs {b.values.shape}")

    def vjp(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node(a.values - b.values, (a, b), vjp)


def mul(a: DiffTensor, b) -> DiffTensor:
    if not isinstance(b, DiffTensor):
        b_val = np.asarray(b, dtype=a.dtype)
        if b_val.shape not in ((), a.values.shape):
            raise ValueError(f"constant shape {b_val.shape} != tensor shape {a.values.shape}")

        def vjp(g):
            _accumulate(a, g * b_val)

        return _node(a.values * b_val, (a,), vjp)

    if a.values.shape != b.values.shape:
        raise ValueError(f"shape mismatch in mul: {a.values.shape} vs {b.values.shape}")

    def vjp(g):
        _accumulate(a, g * b.values)
        _accumulate(b, g * a.values)

    return _node(a.values * b.values, (a, b), vjp)


def absolute(a: DiffTensor) -> DiffTensor:
    sign = np.sign(a.values)

    def vjp(g):
        _accumulate(a, g * sign)

    return _node(np.abs(a.values), (a,), vjp)


def reduce_sum(a: DiffTensor) -> DiffTensor:
    def vjp(g):
        _accumulate(a, np.broadcast_to(g, a.values.shape).copy())

    return _node(a.values.sum(), (a,), vjp)


def reduce_mean(a: DiffTensor) -> DiffTensor:
    n = a.values.size

    def vjp(g):
        _accumulate(a, np.broadcast_to(g / n, a.values.shape).copy())

    return _node(a.values.mean(), (a,), vjp)


# -- activations --------------------------------------------------------------


def relu(a: DiffTensor) -> DiffTensor:
    mask = a.values > 0

    def vjp(g):
        _accumulate(a, g * mask)

    return _node(np.where(mask, a.values, 0.0), (a,), vjp)


def sigmoid(a: DiffTensor) -> DiffTensor:
    # Numerically stable on both tails.
    v = a.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def vjp(g):
        _accumulate(a, g * out * (1.0 - out))

    return _node(out, (a,), vjp)


def activation(a: DiffTensor, kind: str) -> DiffTensor:
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation kind {kind!r}")


# -- structured ops -----------------------------------------------------------


def _check_time_channels(x: DiffTensor):
    if x.values.ndim not in (2, 3):
        raise ValueError(f"expected (T, C) or (B, T, C), got shape {x.values.shape}")


def sep_conv1d(
    x: DiffTensor,
    depthwise_kernel: Parameter,
    pointwise: Parameter,
    stride: int = 1,
) -> DiffTensor:
    """Depthwise temporal convolution (zero same-padding) followed by a
    position-wise channel projection."""
    _check_time_channels(x)
    k, c_dw = depthwise_kernel.values.shape
    c_in, c_out = pointwise.values.shape
    t = x.values.shape[-2]
    if k % 2 != 1:
        raise ValueError("depthwise kernel width must be odd")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    if x.values.shape[-1] != c_dw or c_dw != c_in:
        raise ValueError(
            f"channel mismatch: input {x.values.shape[-1]}, depthwise {c_dw}, "
            f"pointwise {c_in}"
        )
    if t % stride != 0:
        raise ValueError(f"time length {t} not divisible by stride {stride}")

    pad = (k - 1) // 2
    pad_width = [(0, 0)] * (x.values.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.values, pad_width)
    dw = depthwise_kernel.values

    full = np.zeros_like(x.values)
    for j in range(k):
        full += dw[j] * xp[..., j : j + t, :]
    strided = full[..., ::stride, :] if stride > 1 else full
    out = strided @ pointwise.values

    def vjp(g):
        g_strided = g @ pointwise.values.T
        _accumulate(pointwise, _stacked_outer(strided, g))
        if stride > 1:
            g_full = np.zeros_like(full)
            g_full[..., ::stride, :] = g_strided
        else:
            g_full = g_strided
        g_xp = np.zeros_like(xp)
        g_dw = np.zeros_like(dw)
        for j in range(k):
            g_xp[..., j : j + t, :] += dw[j] * g_full
            g_dw[j] = np.sum(xp[..., j : j + t, :] * g_full, axis=tuple(range(g_full.ndim - 1)))
        _accumulate(depthwise_kernel, g_dw)
        _accumulate(x, g_xp[..., pad : pad + t, :])

    return _node(out, (x, depthwise_kernel, pointwise), vjp)


def transposed_conv1d(x: DiffTensor, kernel: Parameter, up_factor: int = 2) -> DiffTensor:
    """Adjoint of a strided temporal convolution; up-samples time by
    `up_factor`. Kernel has shape (k, C_in, C_out)."""
    _check_time_channels(x)
    if up_factor != 2:
        raise ValueError("only up_factor=2 is supported")
    k, c_in, c_out = kernel.values.shape
    t = x.values.shape[-2]
    if x.values.shape[-1] != c_in:
        raise ValueError(f"channel mismatch: input {x.values.shape[-1]}, kernel {c_in}")

    pad = (k - 1) // 2
    t_out = up_factor * t
    out_shape = x.values.shape[:-2] + (t_out, c_out)
    out = np.zeros(out_shape, dtype=x.values.dtype)

    # Output position for input step s and tap j is up_factor*s + j - pad.
    slices = []
    for j in range(k):
        offset = j - pad
        s_start = 0 if offset >= 0 else (-offset + up_factor - 1) // up_factor
        p_start = up_factor * s_start + offset
        n_steps = min(t - s_start, (t_out - 1 - p_start) // up_factor + 1)
        slices.append((s_start, p_start, n_steps))
        if n_steps <= 0:
            continue
        contrib = x.values[..., s_start : s_start + n_steps, :] @ kernel.values[j]
        out[..., p_start : p_start + up_factor * n_steps : up_factor, :] += contrib

    def vjp(g):
        g_x = np.zeros_like(x.values)
        g_k = np.zeros_like(kernel.values)
        for j in range(k):
            s_start, p_start, n_steps = slices[j]
            if n_steps <= 0:
                continue
            g_slice = g[..., p_start : p_start + up_factor * n_steps : up_factor, :]
            g_x[..., s_start : s_start + n_steps, :] += g_slice @ kernel.values[j].T
            g_k[j] = _stacked_outer(x.values[..., s_start : s_start + n_steps, :], g_slice)
        _accumulate(kernel, g_k)
        _accumulate(x, g_x)

    return _node(out, (x, kernel), vjp)


def batch_norm(
    x: DiffTensor,
    state: BatchNormState,
    gamma: Parameter,
    beta: Parameter,
    mode: str = "train",
    eps: float = 1e-5,
) -> DiffTensor:
    """Per-channel normalization over the time axis (and batch axis when
    present). Train mode updates the running statistics in `state`."""
    _check_time_channels(x)
    c = x.values.shape[-1]
    if state.mean.shape[0] != c or gamma.values.shape != (c,) or beta.values.shape != (c,):
        raise ValueError("channel count mismatch in batch_norm")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batch_norm mode {mode!r}")

    axes = tuple(range(x.values.ndim - 1))
    if mode == "train":
        mean = x.values.mean(axis=axes)
        var = x.values.var(axis=axes)
        m = state.momentum
        state.mean = m * state.mean + (1.0 - m) * mean
        state.var = m * state.var + (1.0 - m) * var
    else:
        mean = state.mean
        var = state.var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.values - mean) * inv_std
    out = gamma.values * x_hat + beta.values

    n = int(np.prod([x.values.shape[a] for a in axes]))

    def vjp(g):
        _accumulate(gamma, np.sum(g * x_hat, axis=axes))
        _accumulate(beta, np.sum(g, axis=axes))
        g_hat = g * gamma.values
        if mode == "eval":
            _accumulate(x, g_hat * inv_std)
            return
        centered = x.values - mean
        g_var = np.sum(g_hat * centered, axis=axes) * (-0.5) * inv_std**3
        g_mean = -np.sum(g_hat, axis=axes) * inv_std + g_var * (-2.0 / n) * np.sum(
            centered, axis=axes
        )
        _accumulate(x, g_hat * inv_std + g_var * 2.0 * centered / n + g_mean / n)

    return _node(out, (x, gamma, beta), vjp)


def pointwise_projection(x: DiffTensor, weight: Parameter) -> DiffTensor:
    """Per-time-step matrix product; a width-1 convolution."""
    _check_time_channels(x)
    c_in, c_out = weight.values.shape
    if x.values.shape[-1] != c_in:
        raise ValueError(f"channel mismatch: input {x.values.shape[-1]}, weight {c_in}")

    out = x.values @ weight.values

    def vjp(g):
        _accumulate(weight, _stacked_outer(x.values, g))
        _accumulate(x, g @ weight.values.T)

    return _node(out, (x, weight), vjp)


def avg_pool_stride2(x: DiffTensor) -> DiffTensor:
    """Mean of adjacent time pairs; halves T."""
    _check_time_channels(x)
    t = x.values.shape[-2]
    if t % 2 != 0:
        raise ValueError(f"time length {t} must be even for stride-2 pooling")
    shape = x.values.shape[:-2] + (t // 2, 2, x.values.shape[-1])
    out = x.values.reshape(shape).mean(axis=-2)

    def vjp(g):
        g_x = np.repeat(g, 2, axis=-2) * 0.5
        _accumulate(x, g_x)

    return _node(out, (x,), vjp)


def concat_channels(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _check_time_channels(a)
    _check_time_channels(b)
    if a.values.shape[:-1] != b.values.shape[:-1]:
        raise ValueError(
            f"time axes must agree for channel concat: {a.values.shape} vs {b.values.shape}"
        )
    c_a = a.values.shape[-1]
    out = np.concatenate([a.values, b.values], axis=-1)

    def vjp(g):
        _accumulate(a, g[..., :c_a])
        _accumulate(b, g[..., c_a:])

    return _node(out, (a, b), vjp)


def l2_normalize_pairs(x: DiffTensor, eps: float = 1e-8) -> DiffTensor:
    """Normalize each (re, im) 2-vector to unit length. The real block is
    the first half of the channel axis, the imaginary block the second.
    Pairs with norm < eps map to (1, 0) and pass no gradient."""
    _check_time_channels(x)
    width = x.values.shape[-1]
    if width % 2 != 0:
        raise ValueError("channel width must be even (concatenated re/im blocks)")
    f = width // 2
    a = x.values[..., :f]
    b = x.values[..., f:]
    norm = np.sqrt(a * a + b * b)
    degenerate = norm < eps
    safe = np.where(degenerate, 1.0, norm)
    ua = np.where(degenerate, 1.0, a / safe)
    ub = np.where(degenerate, 0.0, b / safe)
    out = np.concatenate([ua, ub], axis=-1)

    def vjp(g):
        g_a = g[..., :f]
        g_b = g[..., f:]
        inv3 = np.where(degenerate, 0.0, 1.0 / safe**3)
        da = (g_a * b * b - g_b * a * b) * inv3
        db = (g_b * a * a - g_a * a * b) * inv3
        _accumulate(x, np.concatenate([da, db], axis=-1))

    return _node(out, (x,), vjp)


# -- reverse pass -------------------------------------------------------------


def _topo_order(root: DiffTensor):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: DiffTensor) -> None:
    """Reverse-topological gradient accumulation from a scalar loss.

    Intermediate nodes get fresh zero gradients; leaves (inputs and
    Parameters) accumulate across calls. The traversed record is consumed:
    reusing any part of it in a later backward raises GraphConsumedError.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.values.shape}")

    order = _topo_order(loss)
    for node in order:
        if node._consumed:
            raise GraphConsumedError(
                "computation record already consumed by a previous backward pass"
            )
    for node in order:
        if node._parents or node.grad is None:
            node.grad = np.zeros_like(node.values)
    loss.grad = loss.grad + np.ones_like(loss.values)

    for node in reversed(order):
        if node._vjp is not None:
            node._vjp(node.grad)
    for node in order:
        if node._parents:
            node._consumed = True
            node._vjp = None


def zero_grad(params) -> None:
    for p in params:
        p.grad = None
