"""Minimal reverse-mode autodiff on numpy arrays, plus the Adam optimizer.

Tensors wrap float32 arrays by default; float64 is supported end to end as
a verification mode for the finite-difference gradient checks.  The graph
is built eagerly: each op returns a Tensor holding its parents and a
backward closure, and Tensor.backward() replays the recorded tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import InvalidInputError, ShapeMismatchError

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-d float array participating in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of self w.r.t. every reachable tensor."""
        if grad is None:
            grad = np.ones_like(self.data)
        _accumulate(self, np.asarray(grad, dtype=self.data.dtype), force=True)
        for node in reversed(Tape.trace(self).nodes):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Topologically ordered record of the subgraph reaching a root tensor."""

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
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
        return cls(order)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _accumulate(t: Tensor, g: np.ndarray, force: bool = False) -> None:
    if not (t.requires_grad or force):
        return
    if g.shape != t.data.shape:
        raise ShapeMismatchError(f"gradient shape {g.shape} vs tensor {t.data.shape}")
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=False)
    else:
        t.grad = t.grad + g


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


# ---------------------------------------------------------------------------
# elementwise and shape ops

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward_fn(g):
        _accumulate(x, g * mask)

    return _node(np.maximum(x.data, 0), (x,), backward_fn)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward_fn(g):
        _accumulate(x, g * y * (1.0 - y))

    return _node(y, (x,), backward_fn)


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"subtract: {a.data.shape} vs {b.data.shape}")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node(a.data - b.data, (a, b), backward_fn)


def residual_add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"add: {a.data.shape} vs {b.data.shape}")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(a.data + b.data, (a, b), backward_fn)


add = residual_add


def flatten(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.shape[0]
    shape = x.data.shape

    def backward_fn(g):
        _accumulate(x, g.reshape(shape))

    return _node(x.data.reshape(n, -1), (x,), backward_fn)


def mean(x) -> Tensor:
    x = as_tensor(x)
    count = x.data.size

    def backward_fn(g):
        _accumulate(x, np.full_like(x.data, g / count))

    return _node(np.asarray(x.data.mean(), dtype=x.data.dtype), (x,), backward_fn)


def dense(x, w, b=None) -> Tensor:
    """Affine map x @ w + b on (N, D) inputs."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatchError(f"dense: x {x.data.shape} vs w {w.data.shape}")
    out = x.data @ w.data
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (w.data.shape[1],):
            raise ShapeMismatchError(f"dense bias {b.data.shape} vs {w.data.shape[1]}")
        out = out + b.data
        parents.append(b)

    def backward_fn(g):
        _accumulate(x, g @ w.data.T)
        _accumulate(w, x.data.T @ g)
        if b is not None:
            _accumulate(b, g.sum(axis=0))

    return _node(out, tuple(parents), backward_fn)


# ---------------------------------------------------------------------------
# convolution and pooling

def conv_output_size(n: int, k: int, stride: int, padding: str) -> int:
    """Spatial output size: valid -> floor((n-k)/s)+1, same -> ceil(n/s)."""
    if padding == "valid":
        if n < k:
            raise ShapeMismatchError(f"valid conv: input {n} smaller than kernel {k}")
        return (n - k) // stride + 1
    if padding == "same":
        return -(-n // stride)
    raise InvalidInputError(f"unknown padding {padding!r}")


def _pad_amounts(n: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    out = conv_output_size(n, k, stride, padding)
    if padding == "valid":
        return out, 0, 0
    total = max((out - 1) * stride + k - n, 0)
    lo = total // 2
    return out, lo, total - lo


def _check_conv_args(x: Tensor, stride: int):
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"expected NHWC input, got shape {x.data.shape}")
    if stride < 1:
        raise InvalidInputError(f"stride must be >= 1, got {stride}")


def conv2d(x, w, b=None, stride: int = 1, padding: str = "valid") -> Tensor:
    """Cross-correlation of NHWC input with (kh, kw, C_in, C_out) kernel."""
    x, w = as_tensor(x), as_tensor(w)
    _check_conv_args(x, stride)
    if w.data.ndim != 4:
        raise ShapeMismatchError(f"expected (kh,kw,Cin,Cout) kernel, got {w.data.shape}")
    kh, kw, cin, cout = w.data.shape
    n, h, wd, cx = x.data.shape
    if cx != cin:
        raise ShapeMismatchError(f"input has {cx} channels, kernel expects {cin}")
    oh, pt, pb = _pad_amounts(h, kh, stride, padding)
    ow, pl, pr = _pad_amounts(wd, kw, stride, padding)
    xp = np.ascontiguousarray(np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))))
    cols = K.im2col(xp, kh, kw, stride, stride)
    cols2 = cols.reshape(-1, kh * kw * cin)
    w2 = w.data.reshape(-1, cout)
    out2 = cols2 @ w2
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (cout,):
            raise ShapeMismatchError(f"bias {b.data.shape}, expected ({cout},)")
        out2 = out2 + b.data
        parents.append(b)

    def backward_fn(g):
        g2 = np.ascontiguousarray(g.reshape(-1, cout))
        if w.requires_grad:
            _accumulate(w, (cols2.T @ g2).reshape(w.data.shape))
        if b is not None:
            _accumulate(b, g2.sum(axis=0))
        if x.requires_grad:
            gcols = np.ascontiguousarray((g2 @ w2.T).reshape(n, oh, ow, kh * kw * cin))
            gxp = K.col2im_add(gcols, xp.shape[1], xp.shape[2], kh, kw, stride, stride)
            _accumulate(x, gxp[:, pt:pt + h, pl:pl + wd, :])

    return _node(out2.reshape(n, oh, ow, cout), tuple(parents), backward_fn)


def separable_conv2d(x, w_depth, w_point, b=None,
                     stride: int = 1, padding: str = "same") -> Tensor:
    """Depthwise (kh, kw, C_in) conv then pointwise (C_in, C_out) mix."""
    x, w_depth, w_point = as_tensor(x), as_tensor(w_depth), as_tensor(w_point)
    _check_conv_args(x, stride)
    if w_depth.data.ndim != 3:
        raise ShapeMismatchError(f"depthwise kernel must be (kh,kw,C), got {w_depth.data.shape}")
    kh, kw, cd = w_depth.data.shape
    n, h, wd, cin = x.data.shape
    if cd != cin:
        raise ShapeMismatchError(f"input has {cin} channels, depthwise kernel {cd}")
    if w_point.data.ndim != 2 or w_point.data.shape[0] != cin:
        raise ShapeMismatchError(
            f"pointwise weight {w_point.data.shape}, expected ({cin}, C_out)")
    cout = w_point.data.shape[1]
    oh, pt, pb = _pad_amounts(h, kh, stride, padding)
    ow, pl, pr = _pad_amounts(wd, kw, stride, padding)
    xp = np.ascontiguousarray(np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))))
    wdep = np.ascontiguousarray(w_depth.data)
    dw = K.depthwise_forward(xp, wdep, stride, stride)
    dw2 = dw.reshape(-1, cin)
    out2 = dw2 @ w_point.data
    parents = [x, w_depth, w_point]
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (cout,):
            raise ShapeMismatchError(f"bias {b.data.shape}, expected ({cout},)")
        out2 = out2 + b.data
        parents.append(b)

    def backward_fn(g):
        g2 = g.reshape(-1, cout)
        if w_point.requires_grad:
            _accumulate(w_point, dw2.T @ g2)
        if b is not None:
            _accumulate(b, g2.sum(axis=0))
        gdw = np.ascontiguousarray((g2 @ w_point.data.T).reshape(n, oh, ow, cin))
        if w_depth.requires_grad:
            _accumulate(w_depth, K.depthwise_grad_weight(xp, gdw, kh, kw, stride, stride))
        if x.requires_grad:
            gxp = K.depthwise_grad_input(gdw, wdep, xp.shape[1], xp.shape[2], stride, stride)
            _accumulate(x, gxp[:, pt:pt + h, pl:pl + wd, :])

    return _node(out2.reshape(n, oh, ow, cout), tuple(parents), backward_fn)


def max_pool(x, k: int, stride: int, padding: str = "valid") -> Tensor:
    x = as_tensor(x)
    _check_conv_args(x, stride)
    n, h, wd, c = x.data.shape
    oh, pt, pb = _pad_amounts(h, k, stride, padding)
    ow, pl, pr = _pad_amounts(wd, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)),
                constant_values=-np.inf)
    xp = np.ascontiguousarray(xp)
    out, arg = K.maxpool_forward(xp, k, stride)

    def backward_fn(g):
        gxp = K.maxpool_grad_input(np.ascontiguousarray(g), arg,
                                   xp.shape[1], xp.shape[2], k, stride)
        _accumulate(x, gxp[:, pt:pt + h, pl:pl + wd, :])

    return _node(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# initialization, regularization, optimizer

def xavier_uniform_init(shape, fan_in: int, fan_out: int, rng: np.random.Generator,
                        dtype=np.float32) -> Tensor:
    """Uniform on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]."""
    if fan_in <= 0 or fan_out <= 0:
        raise InvalidInputError(f"fans must be positive, got {fan_in}, {fan_out}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def l2_penalty(params, lam: float) -> Tensor:
    """lam * sum of squared entries over the given kernels; gradient 2*lam*W."""
    if lam < 0:
        raise InvalidInputError(f"lambda must be >= 0, got {lam}")
    params = [as_tensor(p) for p in params]
    dtype = params[0].data.dtype if params else np.float32
    total = sum(float((p.data.astype(np.float64) ** 2).sum()) for p in params)

    def backward_fn(g):
        for p in params:
            _accumulate(p, (2.0 * lam * g) * p.data)

    return _node(np.asarray(lam * total, dtype=dtype), tuple(params), backward_fn)


@dataclass
class AdamState:
    """Adam moments plus the decaying learning rate."""

    lr: float = 1e-4
    decay: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor]) -> None:
    """One bias-corrected Adam update; a missing gradient counts as zero."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name in sorted(params):
        p = params[name]
        g = p.grad
        if g is not None and g.shape != p.data.shape:
            raise ShapeMismatchError(f"{name}: grad {g.shape} vs param {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        v *= state.beta2
        if g is not None:
            m += (1.0 - state.beta1) * g
            v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def decay_lr(state: AdamState) -> None:
    state.lr *= state.decay


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
