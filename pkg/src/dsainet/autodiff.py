"""Dense numpy tensors with tape-based reverse-mode differentiation.

Every model stage is written in terms of the operations below. A forward pass
builds a graph of :class:`Tensor` nodes; :func:`backward` linearises that graph
into a :class:`Tape` (topological order) and replays the recorded backward
rules in reverse, accumulating gradients into the ``grad`` slot of every
``requires_grad`` leaf.

Arrays are 64-bit by default. 32-bit arrays are carried through unchanged, so a
model whose parameters are float32 trains in float32.
"""
from __future__ import annotations

import threading
import warnings
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .exceptions import ConfigurationError, ContractError, DimensionError

DEFAULT_DTYPE = np.float64

_state = threading.local()


class DetachedGraphWarning(UserWarning):
    """Emitted when ``backward`` is called on a tensor that carries no graph."""


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread (inference mode)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """An n-d float array with an optional gradient slot.

    The data buffer is never mutated by the operations in this module; only
    ``grad`` changes after creation.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_rule", "_op", "_consumed")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._rule = None
        self._op = "leaf"
        self._consumed = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    @property
    def T(self):
        return transpose(self, None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def make_op(data: np.ndarray, parents: Sequence[Tensor], rule: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of a differentiable op.

    ``rule(g)`` receives the upstream gradient and returns one gradient (or
    ``None``) per parent, in order.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._rule = rule
    else:
        out.requires_grad = False
        out._parents = ()
        out._rule = None
    return out


# ----------------------------------------------------------------------------
# tape and backward
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class TapeEntry:
    op: str
    input_ids: tuple
    output_id: int


class Tape:
    """Topologically ordered record of the ops that produced a loss."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def record(cls, loss: Tensor) -> "Tape":
        order = []
        visited = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        return cls(order)

    @property
    def entries(self) -> list:
        return [
            TapeEntry(n._op, tuple(id(p) for p in n._parents), id(n))
            for n in self.nodes
            if n._parents
        ]

    def leaves(self) -> list:
        return [n for n in self.nodes if not n._parents]

    def replay(self, seed: np.ndarray) -> None:
        grads = {id(self.nodes[-1]): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                g = np.array(g, dtype=node.dtype, copy=True)
                node.grad = g if node.grad is None else node.grad + g
                continue
            pgrads = node._rule(g)
            for p, gp in zip(node._parents, pgrads):
                if gp is None or not p.requires_grad:
                    continue
                if gp.shape != p.shape:
                    raise DimensionError(
                        f"backward rule of {node._op!r} produced grad {gp.shape} for input {p.shape}"
                    )
                k = id(p)
                grads[k] = gp if k not in grads else grads[k] + gp


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` leaf reachable from ``loss``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        warnings.warn("backward on a tensor with no recorded graph; nothing to do", DetachedGraphWarning)
        return
    if loss._consumed:
        raise ContractError("backward already ran for this loss; run a fresh forward pass first")
    tape = Tape.record(loss)
    tape.replay(np.ones_like(loss.data))
    loss._consumed = True


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------
def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for a {ndim}-d tensor")
    return axis % ndim


# ----------------------------------------------------------------------------
# arithmetic
# ----------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def rule(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_op(a.data + b.data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def rule(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_op(a.data - b.data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def rule(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), rule, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data / b.data

    def rule(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), rule, "div")


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant scalar."""
    c = a.dtype.type(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_op(np.matmul(a.data, b.data), (a, b), rule, "matmul")


# ----------------------------------------------------------------------------
# reductions and shape ops
# ----------------------------------------------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(_norm_axis(ax, a.ndim) for ax in axes)
    else:
        axes = tuple(range(a.ndim))

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return make_op(a.data.sum(axis=axes, keepdims=keepdims), (a,), rule, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[_norm_axis(ax, a.ndim)] for ax in axes]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} into {tuple(shape)}") from exc
    return make_op(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(_norm_axis(ax, a.ndim) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid permutation {axes} for a {a.ndim}-d tensor")
    inv = tuple(np.argsort(axes))
    return make_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = _norm_axis(axis, tensors[0].ndim)
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_op(out, tensors, rule, "concat")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make_op(np.array(out, copy=True), (a,), rule, "getitem")


# ----------------------------------------------------------------------------
# nonlinearities and normalisers
# ----------------------------------------------------------------------------
_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def rule(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return make_op(x * cdf, (a,), rule, "gelu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, a.ndim)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return make_op(y, (a,), rule, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, a.ndim)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=ax, keepdims=True))
    out = z - lse

    def rule(g):
        return (g - np.exp(out) * g.sum(axis=ax, keepdims=True),)

    return make_op(out, (a,), rule, "log_softmax")


def layer_norm(a: Tensor, weight: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise along ``axis``; optional affine ``weight``/``bias`` broadcast on the last axis."""
    if eps <= 0:
        raise ConfigurationError("layer_norm eps must be positive")
    ax = _norm_axis(axis, a.ndim)
    x = a.data
    mu = x.mean(axis=ax, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    xhat = xc * rstd

    def rule(g):
        return (rstd * (g - g.mean(axis=ax, keepdims=True)
                        - xhat * (g * xhat).mean(axis=ax, keepdims=True)),)

    out = make_op(xhat, (a,), rule, "layer_norm")
    if weight is not None:
        out = mul(out, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def batch_norm(a: Tensor, weight: Tensor, bias: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, train: bool, momentum: float = 0.1,
               eps: float = 1e-5, axis: int = 1) -> Tensor:
    """Per-channel normalisation over every axis except ``axis``.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); otherwise the running buffers are used.
    """
    if eps <= 0:
        raise ConfigurationError("batch_norm eps must be positive")
    ax = _norm_axis(axis, a.ndim)
    red = tuple(i for i in range(a.ndim) if i != ax)
    bshape = [1] * a.ndim
    bshape[ax] = a.shape[ax]
    x = a.data
    w = weight.data.reshape(bshape)
    if train:
        n = x.size // x.shape[ax]
        mu = x.mean(axis=red, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=red, keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(-1) * (n / max(n - 1, 1))
    else:
        mu = running_mean.reshape(bshape).astype(x.dtype)
        xc = x - mu
        var = running_var.reshape(bshape).astype(x.dtype)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd

    def rule(g):
        gx = gw = gb = None
        if a.requires_grad:
            gh = g * w
            if train:
                gx = rstd * (gh - gh.mean(axis=red, keepdims=True)
                             - xhat * (gh * xhat).mean(axis=red, keepdims=True))
            else:
                gx = gh * rstd
        if weight.requires_grad:
            gw = (g * xhat).sum(axis=red).reshape(weight.shape)
        if bias.requires_grad:
            gb = g.sum(axis=red).reshape(bias.shape)
        return gx, gw, gb

    out = xhat * w + bias.data.reshape(bshape)
    return make_op(out, (a, weight, bias), rule, "batch_norm")


def dropout(a: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: identity at inference, ``mask / (1 - rate)`` in training."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    mask = (rng.random(a.shape) >= rate).astype(a.dtype) / a.dtype.type(1.0 - rate)
    return make_op(a.data * mask, (a,), lambda g: (g * mask,), "dropout")


# ----------------------------------------------------------------------------
# convolution and pooling
# ----------------------------------------------------------------------------
def same_padding(k: int) -> tuple:
    """Symmetric zero padding keeping length; even kernels pad one extra on the right."""
    left = (k - 1) // 2
    return left, k - 1 - left


def _corr_valid(xp: np.ndarray, w: np.ndarray, groups: int):
    """Valid grouped cross-correlation of a pre-padded ``[B, C_in, L + k - 1]`` array.

    Returns the ``[B, C_out, L]`` result and the sliding-window view used.
    """
    B, cin, Lp = xp.shape
    cout, cin_g, k = w.shape
    L = Lp - k + 1
    cout_g = cout // groups
    win = sliding_window_view(xp, k, axis=2)  # [B, C_in, L, k]
    if groups == 1:
        cols = win.transpose(0, 2, 1, 3).reshape(B * L, cin * k)
        out = (cols @ w.reshape(cout, cin * k).T).reshape(B, L, cout).transpose(0, 2, 1)
    elif cin_g == 1 and cout_g == 1:
        out = np.einsum("bclk,ck->bcl", win, w[:, 0, :])
    else:
        out = np.einsum("bgclk,gock->bgol", win.reshape(B, groups, cin_g, L, k),
                        w.reshape(groups, cout_g, cin_g, k), optimize=True).reshape(B, cout, L)
    return np.ascontiguousarray(out), win


def _flip_kernel(w: np.ndarray, groups: int) -> np.ndarray:
    """Kernel of the transposed correlation: ``[C_in, C_out // groups, k]``, reversed in time."""
    cout, cin_g, k = w.shape
    cout_g = cout // groups
    wt = w.reshape(groups, cout_g, cin_g, k).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(wt.reshape(groups * cin_g, cout_g, k)[..., ::-1])


def conv1d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, groups: int = 1) -> Tensor:
    """Grouped 1-d cross-correlation with same padding.

    ``x``: ``[B, C_in, L]``; ``w``: ``[C_out, C_in // groups, k]``; returns ``[B, C_out, L]``.
    """
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d expects x [B, C, L] and w [O, C/g, k], got {x.shape}, {w.shape}")
    B, cin, L = x.shape
    cout, cin_g, k = w.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigurationError(f"groups={groups} must divide in={cin} and out={cout} channels")
    if cin_g != cin // groups:
        raise DimensionError(f"kernel {w.shape} does not match {cin} input channels in {groups} groups")
    if k > 2 * L - 1:
        raise ConfigurationError(f"kernel size {k} too large for length {L} with same padding")
    cout_g = cout // groups
    left, right = same_padding(k)
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    out, win = _corr_valid(xp, w.data, groups)
    if bias is not None:
        out += bias.data.reshape(1, cout, 1)

    def rule(g):
        gx = gw = gb = None
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (right, left)))
            gx, _ = _corr_valid(gp, _flip_kernel(w.data, groups), groups)
        if w.requires_grad:
            if groups == 1:
                cols = win.transpose(0, 2, 1, 3).reshape(B * L, cin * k)
                gw = (g.transpose(0, 2, 1).reshape(B * L, cout).T @ cols).reshape(w.shape)
            elif cin_g == 1 and cout_g == 1:
                gw = np.einsum("bcl,bclk->ck", g, win)[:, None, :]
            else:
                gw = np.einsum("bgol,bgclk->gock", g.reshape(B, groups, cout_g, L),
                               win.reshape(B, groups, cin_g, L, k), optimize=True).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return make_op(out, parents, rule, "conv1d")


def conv1d_depthwise(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-channel temporal convolution; ``x`` is ``[ch, len]`` or ``[B, ch, len]``, kernel ``[ch, k]``."""
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if kernel.ndim != 2 or kernel.shape[0] != x.shape[1]:
        raise DimensionError(f"depthwise kernel {kernel.shape} does not match {x.shape[1]} channels")
    out = conv1d(x, reshape(kernel, (kernel.shape[0], 1, kernel.shape[1])), bias, groups=x.shape[1])
    return reshape(out, out.shape[1:]) if squeeze else out


def pointwise_grouped(x: Tensor, w: Tensor, groups: int = 1, bias: Optional[Tensor] = None) -> Tensor:
    """Grouped 1x1 convolution: ``x`` ``[(B,) C_in, L]``, ``w`` ``[C_out, C_in // groups]``."""
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    B, cin, L = x.shape
    if w.ndim != 2:
        raise DimensionError(f"pointwise weight must be 2-d, got {w.shape}")
    cout = w.shape[0]
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigurationError(f"groups={groups} must divide in={cin} and out={cout} channels")
    cin_g, cout_g = cin // groups, cout // groups
    if w.shape[1] != cin_g:
        raise DimensionError(f"pointwise weight {w.shape} does not match {cin} channels in {groups} groups")
    xr = x.data.reshape(B, groups, cin_g, L)
    wr = w.data.reshape(groups, cout_g, cin_g)
    out = np.matmul(wr, xr).reshape(B, cout, L)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1)

    def rule(g):
        gr = g.reshape(B, groups, cout_g, L)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(np.swapaxes(wr, -1, -2), gr).reshape(B, cin, L)
        if w.requires_grad:
            gw = np.matmul(gr, np.swapaxes(xr, -1, -2)).sum(axis=0).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    res = make_op(out, parents, rule, "pointwise_grouped")
    return reshape(res, res.shape[1:]) if squeeze else res


def avg_pool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping mean pooling over the last axis; the trailing remainder is dropped."""
    if window < 1:
        raise ConfigurationError(f"pool window must be >= 1, got {window}")
    L = x.shape[-1]
    n = L // window
    if n == 0:
        raise DimensionError(f"pool window {window} exceeds length {L}: empty output")
    lead = x.shape[:-1]
    out = x.data[..., : n * window].reshape(lead + (n, window)).mean(axis=-1)

    def rule(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[..., : n * window] = np.repeat(g / window, window, axis=-1)
        return (gx,)

    return make_op(out, (x,), rule, "avg_pool1d")
