"""A small reverse-mode autodiff engine on top of numpy.

Every operation that touches a tensor requiring gradients records a node
carrying a global sequence number. ``Tensor.backward`` collects the nodes
reachable from the loss, orders them by descending sequence number (the
exact reverse of execution order) and replays their local backward rules.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ShapeError

DTYPE = np.float32

_seq = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense float32 array with optional participation in the gradient tape."""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op: Optional[str] = None
        self._seq = next(_seq)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- graph ------------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> "Tape":
        """Backpropagate from this tensor; returns the replayed tape."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        tape = Tape.from_output(self)
        tape.replay(self, np.asarray(grad, dtype=DTYPE))
        return tape

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


class Tape:
    """Ordered record of the operations behind one output.

    ``ops`` is in execution order; ``replay`` walks it backwards.
    """

    def __init__(self, ops: list):
        self.ops = ops

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen = set()
        nodes = []
        stack = [out]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t._backward is not None:
                nodes.append(t)
            stack.extend(p for p in t._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def replay(self, out: Tensor, grad: np.ndarray):
        grads = {id(out): grad}
        for node in reversed(self.ops):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if p._backward is None:
                    p.grad = pg.astype(DTYPE) if p.grad is None else p.grad + pg
                else:
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else prev + pg
        if out._backward is None:
            out.grad = grad if out.grad is None else out.grad + grad


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(DTYPE)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def tsum(x: Tensor) -> Tensor:
    return _make(np.asarray(x.data.sum(dtype=np.float64), dtype=DTYPE), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).astype(DTYPE),), "sum")


def tmean(x: Tensor) -> Tensor:
    n = x.size
    return _make(np.asarray(x.data.mean(dtype=np.float64), dtype=DTYPE), (x,),
                 lambda g: (np.full(x.shape, g / n, dtype=DTYPE),), "mean")


# -- convolution ---------------------------------------------------------------

def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, dilation: int = 1) -> Tensor:
    """Causal dilated 1-D convolution along the last axis.

    ``x`` is ``C_in x T`` or ``N x C_in x T``; ``weight`` is ``C_out x C_in x K``.
    The input is left-padded with ``(K - 1) * dilation`` zeros so the output
    has the same length as the input, and output frame ``t`` only sees input
    frames ``<= t``.
    """
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ConfigurationError(f"dilation must be a positive integer, got {dilation!r}")
    if weight.ndim != 3:
        raise ConfigurationError(f"weight must be C_out x C_in x K, got shape {weight.shape}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ShapeError(f"input must be C x T or N x C x T, got shape {x.shape}")
    n, c_in, t = xd.shape
    c_out, w_in, k = weight.shape
    if w_in != c_in:
        raise ConfigurationError(f"input has {c_in} channels but weight expects {w_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ConfigurationError(f"bias shape {bias.shape} does not match {c_out} output channels")
    pad = (k - 1) * dilation
    # channel-major layout so each tap is a single GEMM over all N*T columns
    xp = np.zeros((c_in, n, t + pad), dtype=DTYPE)
    xp[:, :, pad:] = xd.transpose(1, 0, 2)
    # tap-major copy: a strided w[:, :, j] would push matmul off the BLAS path
    wt = np.ascontiguousarray(weight.data.transpose(2, 0, 1))
    out = np.zeros((c_out, n * t), dtype=DTYPE)
    for j in range(k):
        s = j * dilation
        out += wt[j] @ xp[:, :, s:s + t].reshape(c_in, n * t)
    if bias is not None:
        out += bias.data[:, None]
    y = out.reshape(c_out, n, t).transpose(1, 0, 2)
    if squeeze:
        y = y[0]
    y = np.ascontiguousarray(y)

    def bw(g):
        g3 = g[None] if squeeze else g
        g2 = np.ascontiguousarray(g3.transpose(1, 0, 2)).reshape(c_out, n * t)
        gx = gw = gb = None
        if weight.requires_grad:
            gwt = np.empty_like(wt)
            for j in range(k):
                s = j * dilation
                gwt[j] = g2 @ xp[:, :, s:s + t].reshape(c_in, n * t).T
            gw = np.ascontiguousarray(gwt.transpose(1, 2, 0))
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1)
        if x.requires_grad:
            gxp = np.zeros((c_in, n, t + pad), dtype=DTYPE)
            for j in range(k):
                s = j * dilation
                gxp[:, :, s:s + t] += (wt[j].T @ g2).reshape(c_in, n, t)
            gx = gxp[:, :, pad:].transpose(1, 0, 2)
            gx = np.ascontiguousarray(gx[0] if squeeze else gx)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, bw, "conv1d")


def gated_unit(x: Tensor, weight_filter: Tensor, weight_gate: Tensor, dilation: int = 1,
               bias_filter: Optional[Tensor] = None, bias_gate: Optional[Tensor] = None) -> Tensor:
    """tanh(filter conv) * sigmoid(gate conv), the WaveNet nonlinearity."""
    if weight_filter.shape != weight_gate.shape:
        raise ConfigurationError(
            f"filter and gate weights differ in shape: {weight_filter.shape} vs {weight_gate.shape}")
    f = conv1d(x, weight_filter, bias_filter, dilation)
    s = conv1d(x, weight_gate, bias_gate, dilation)
    return mul(tanh(f), sigmoid(s))


# -- normalization and regularization -------------------------------------------

def batchnorm1d(x: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None,
                training: bool = True, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of an ``N x C x T`` (or ``C x T``) tensor.

    In training mode statistics are taken over N and T and the running
    buffers are updated in place as ``r <- momentum * r + (1 - momentum) * batch``.
    In eval mode the running buffers are used and the op is affine.
    """
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    n, c, t = xd.shape
    shape = (1, c, 1)
    if training:
        m = n * t
        if m < 2:
            raise ConfigurationError("batch norm in training mode needs more than one value per channel")
        mu = xd.mean(axis=(0, 2), dtype=np.float64)
        var = xd.var(axis=(0, 2), dtype=np.float64)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu.astype(DTYPE)
        running_var *= momentum
        running_var += (1.0 - momentum) * (var * m / (m - 1)).astype(DTYPE)
        inv = (1.0 / np.sqrt(var + eps)).astype(DTYPE).reshape(shape)
        xhat = (xd - mu.astype(DTYPE).reshape(shape)) * inv
    else:
        inv = (1.0 / np.sqrt(running_var.astype(np.float64) + eps)).astype(DTYPE).reshape(shape)
        xhat = (xd - running_mean.reshape(shape)) * inv
    g_arr = gamma.data.reshape(shape) if gamma is not None else None
    y = xhat * g_arr if g_arr is not None else xhat
    if beta is not None:
        y = y + beta.data.reshape(shape)
    y = y.astype(DTYPE)

    def bw(g):
        g3 = g[None] if squeeze else g
        dxhat = g3 * g_arr if g_arr is not None else g3
        gx = None
        if x.requires_grad:
            if training:
                m = n * t
                s1 = dxhat.sum(axis=(0, 2), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
                gx = inv / m * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv
            gx = gx[0] if squeeze else gx
        gg = (g3 * xhat).sum(axis=(0, 2)) if gamma is not None else None
        gb = g3.sum(axis=(0, 2)) if beta is not None else None
        out = [gx]
        if gamma is not None:
            out.append(gg)
        if beta is not None:
            out.append(gb)
        return out

    parents = [x]
    if gamma is not None:
        parents.append(gamma)
    if beta is not None:
        parents.append(beta)
    return _make(y[0] if squeeze else y, parents, bw, "batchnorm1d")


def dropout(x: Tensor, rate: float, training: bool = True, seed=None) -> Tensor:
    """Inverted dropout. ``seed`` may be an int or a ``numpy.random.Generator``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = rng.random(x.shape) >= rate
    scale = DTYPE(1.0 / (1.0 - rate))
    mask = keep.astype(DTYPE) * scale
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# -- losses --------------------------------------------------------------------

def mse_loss(pred: Tensor, target) -> Tensor:
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred.data.astype(np.float64) - target.data
    n = diff.size
    val = np.asarray((diff * diff).mean(), dtype=DTYPE)

    def bw(g):
        return (2.0 * g * diff / n).astype(DTYPE), None

    return _make(val, (pred, target), bw, "mse_loss")
