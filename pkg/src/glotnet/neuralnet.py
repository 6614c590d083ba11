"""A deliberately small reverse-mode autodiff engine on numpy arrays.

Only the operations the waveform model needs are provided. Sequence
tensors use a (batch, channels, time) layout.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), name=None):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name})"

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        order, seen = [], set()
        stack = [(self, False)]
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
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior node: free the buffer once propagated
                    node.grad = None if node is not self else node.grad

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _result(data, parents, backward):
    out = Tensor(data, _parents=tuple(parents))
    if out.requires_grad:
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - y * y))

    return _result(y, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)

    def backward(g):
        x._accumulate(g * y * (1.0 - y))

    return _result(y, (x,), backward)


def crelu(x, axis=1) -> Tensor:
    """Concatenated rectifier: [relu(x), relu(-x)] along ``axis``."""
    x = as_tensor(x)
    pos = x.data > 0
    y = np.concatenate((np.where(pos, x.data, 0.0), np.where(pos, 0.0, -x.data)), axis=axis)

    def backward(g):
        gp, gn = np.split(g, 2, axis=axis)
        x._accumulate(np.where(pos, gp, -gn))

    return _result(y, (x,), backward)


def concat(tensors, axis=1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, gi in zip(tensors, np.split(g, sizes, axis=axis)):
            t._accumulate(gi)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take(x, idx) -> Tensor:
    """Basic (slice) indexing."""
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x._accumulate(full)

    return _result(x.data[idx], (x,), backward)


def clamp_min(x, floor: float) -> Tensor:
    x = as_tensor(x)
    keep = x.data >= floor

    def backward(g):
        x._accumulate(np.where(keep, g, 0.0))

    return _result(np.where(keep, x.data, floor), (x,), backward)


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size

    def backward(g):
        x._accumulate(np.broadcast_to(g / n, x.shape))

    return _result(np.asarray(x.data.mean()), (x,), backward)


# ---------------------------------------------------------------------------
# convolutions


def _shift(x, s):
    """Delay along the last axis by ``s`` samples with zero fill."""
    if s == 0:
        return x
    out = np.zeros_like(x)
    if s < x.shape[-1]:
        out[..., s:] = x[..., :-s]
    return out


def _advance(g, s):
    """Adjoint of ``_shift``."""
    if s == 0:
        return g
    out = np.zeros_like(g)
    if s < g.shape[-1]:
        out[..., :-s] = g[..., s:]
    return out


def conv1d(x, weight, bias=None, dilation: int = 1, causal: bool = True) -> Tensor:
    """Dilated 1-D convolution on (B, C_in, T) input.

    ``out[c, t] = bias[c] + sum_{i,j} w[c, i, j] x[i, t - (k-1-j) d]`` for the
    causal case; otherwise the padding is split evenly (odd k only).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ValueError("conv1d expects x (B, C_in, T) and weight (C_out, C_in, k)")
    c_out, c_in, k = weight.shape
    if x.shape[1] != c_in:
        raise ValueError(f"input has {x.shape[1]} channels, weight expects {c_in}")
    if dilation < 1 or k < 1:
        raise ValueError("dilation and kernel width must be >= 1")
    if causal:
        delays = [(k - 1 - j) * dilation for j in range(k)]
    else:
        if k % 2 == 0:
            raise ValueError("non-causal conv1d needs an odd kernel width")
        delays = [((k - 1) // 2 - j) * dilation for j in range(k)]
    taps = [_shift(x.data, s) if s >= 0 else _advance(x.data, -s) for s in delays]
    w = weight.data
    # contiguous per-tap matrices keep matmul on the BLAS path
    wt = [np.ascontiguousarray(w[:, :, j]) for j in range(k)]
    y = sum(np.matmul(wt[j], taps[j]) for j in range(k))
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ValueError("bias must have shape (C_out,)")
        y = y + bias.data[None, :, None]
        parents.append(bias)

    def backward(g):
        if weight.requires_grad:
            gw = np.empty_like(w)
            for j in range(k):
                gw[:, :, j] = _outer_sum(g, taps[j])
            weight._accumulate(gw)
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for j, s in enumerate(delays):
                gj = np.matmul(wt[j].T, g)
                gx += _advance(gj, s) if s >= 0 else _shift(gj, -s)
            x._accumulate(gx)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))

    return _result(y, parents, backward)


def _outer_sum(g, x) -> np.ndarray:
    """sum_{b,t} g[b, :, t] x[b, :, t]^T, batched through BLAS."""
    return np.matmul(g, x.transpose(0, 2, 1)).sum(axis=0)


def conv1x1(x, weight, bias=None) -> Tensor:
    """Pointwise convolution with a (C_out, C_in) weight matrix."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv1x1 shape mismatch: x {x.shape}, weight {weight.shape}")
    y = np.matmul(weight.data, x.data)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.data[None, :, None]
        parents.append(bias)

    def backward(g):
        if weight.requires_grad:
            weight._accumulate(_outer_sum(g, x.data))
        if x.requires_grad:
            x._accumulate(np.matmul(weight.data.T, g))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))

    return _result(y, parents, backward)


def resample(x, weights) -> Tensor:
    """Fixed linear map along time: ``y[b] = x[b] @ weights[b]``.

    ``x`` is (B, C, F) and ``weights`` a constant (B, F, T) array, e.g. the
    linear interpolation from frame rate to sample rate.
    """
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 3 or weights.shape[0] != x.shape[0] or weights.shape[1] != x.shape[2]:
        raise ValueError(f"resample weights {weights.shape} do not fit input {x.shape}")

    def backward(g):
        x._accumulate(np.matmul(g, weights.transpose(0, 2, 1)))

    return _result(np.matmul(x.data, weights), (x,), backward)


# ---------------------------------------------------------------------------
# WaveNet building blocks


def gated_unit(x_in, w_f, w_g, cond_f, cond_g, dilation: int) -> Tensor:
    """tanh(W_f * x + L_f) * sigmoid(W_g * x + L_g) with causal dilated convs."""
    f = tanh(add(conv1d(x_in, w_f, None, dilation), cond_f))
    g = sigmoid(add(conv1d(x_in, w_g, None, dilation), cond_g))
    return mul(f, g)


def residual_block(x_in, params: dict, cond_f, cond_g, dilation: int):
    """Returns (x_out, x_skip); x_out = W_res x_skip + b_res + x_in."""
    if params["w_res"].shape[0] != x_in.shape[1]:
        raise ValueError("residual projection must preserve the channel count")
    skip = gated_unit(x_in, params["w_f"], params["w_g"], cond_f, cond_g, dilation)
    out = add(conv1x1(skip, params["w_res"], params.get("b_res")), x_in)
    return out, skip


def crelu_dense(x, weight, bias=None) -> Tensor:
    return conv1x1(crelu(x), weight, bias)


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    skipped: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> bool:
    """Bias-corrected Adam update in place. Returns False if skipped."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            state.skipped += 1
            warnings.warn(f"non-finite gradient in {name}, update skipped", RuntimeWarning)
            return False
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True


@dataclass
class EmaState:
    shadow: dict
    decay: float = 0.999

    @classmethod
    def from_params(cls, params: dict, decay: float = 0.999) -> "EmaState":
        return cls({k: p.data.copy() for k, p in params.items()}, decay)


def ema_update(ema: EmaState, params: dict) -> EmaState:
    for name, p in params.items():
        s = ema.shadow[name]
        if s.shape != p.data.shape:
            raise ValueError(f"shadow shape mismatch for {name}")
        s *= ema.decay
        s += (1.0 - ema.decay) * p.data
    return ema


def log_sigmoid(x):
    return log_expit(x)
