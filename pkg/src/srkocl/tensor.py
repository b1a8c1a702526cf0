"""Minimal deterministic reverse-mode autodiff engine on numpy buffers.

Shapes follow a channels-last convention: feature maps are (H, W, C) and
every op also accepts a leading batch axis, e.g. (N, H, W, C). Reductions
run in a fixed order so that repeated passes over identical inputs produce
bit-identical values and gradients.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}


class ShapeError(ValueError):
    """Operand shapes disagree with an op's contract."""


class NumericalError(ArithmeticError):
    """A buffer that must be finite contains NaN or Inf."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, FD probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense n-d array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data: np.ndarray, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def tensor(values, dtype=np.float64, requires_grad: bool = False) -> Tensor:
    """Create a leaf tensor, rejecting non-finite values."""
    data = np.array(values, dtype=dtype)
    if not np.all(np.isfinite(data)):
        raise NumericalError("leaf tensor contains non-finite values")
    return Tensor(data, requires_grad=requires_grad)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    """Wrap an op result, recording the graph edge only when it matters."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(root: Tensor) -> None:
    """Populate grads of every requires_grad leaf reachable from a scalar root.

    Nodes are visited in reverse topological order; the order is a pure
    function of how the graph was built, so accumulation is deterministic.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return _make(out_data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: {a.data.shape} vs {b.data.shape}")
    out_data = a.data - b.data

    def back(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(out_data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: {a.data.shape} vs {b.data.shape}")
    out_data = a.data * b.data

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(out_data, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    out_data = a.data * c

    def back(g):
        _accum(a, g * c)

    return _make(out_data, (a,), back)


def sum_all(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def back(g):
        _accum(a, np.full_like(a.data, g))

    return _make(out_data, (a,), back)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    """Mean along one axis, accumulated left to right.

    Sequential accumulation keeps the result bit-identical to a naive
    per-element loop, which downstream pooled-statistics oracles rely on.
    """
    n = a.data.shape[axis]
    idx = [slice(None)] * a.data.ndim
    idx[axis] = 0
    acc = a.data[tuple(idx)].copy()
    for i in range(1, n):
        idx[axis] = i
        acc += a.data[tuple(idx)]
    out_data = acc / n

    def back(g):
        _accum(a, np.expand_dims(g / n, axis))

    return _make(out_data, (a,), back)


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    out_data = np.concatenate([a.data, b.data], axis=axis)
    split = a.data.shape[axis]

    def back(g):
        idx_a = [slice(None)] * g.ndim
        idx_a[axis] = slice(0, split)
        idx_b = [slice(None)] * g.ndim
        idx_b[axis] = slice(split, None)
        _accum(a, g[tuple(idx_a)])
        _accum(b, g[tuple(idx_b)])

    return _make(out_data, (a, b), back)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows of a (N, ...) tensor; gradient scatters back by index."""
    idx = np.asarray(idx, dtype=np.intp)
    out_data = a.data[idx]

    def back(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return _make(out_data, (a,), back)


# ---------------------------------------------------------------------------
# activations


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def back(g):
        _accum(a, g * (a.data > 0))

    return _make(out_data, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype, copy=False)

    def back(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), back)


def activation(kind: str, a: Tensor) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation kind: {kind!r}")


# ---------------------------------------------------------------------------
# linear algebra / convolution


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map. x: (n,) or (N, n); weight: (n, m); bias: (m,)."""
    n, m = weight.data.shape
    if x.data.shape[-1] != n or bias.data.shape != (m,):
        raise ShapeError(
            f"linear: x {x.data.shape}, weight {weight.data.shape}, bias {bias.data.shape}")
    out_data = x.data @ weight.data + bias.data

    def back(g):
        _accum(x, g @ weight.data.T)
        if x.data.ndim == 1:
            _accum(weight, np.outer(x.data, g))
            _accum(bias, g)
        else:
            _accum(weight, x.data.T @ g)
            _accum(bias, g.sum(axis=0))

    return _make(out_data, (x, weight, bias), back)


def _conv2d_input_grad(g, kernels, xp_shape, stride, ho, wo):
    """Gradient of conv2d w.r.t. the padded input."""
    kh, kw = kernels.shape[:2]
    gxp = np.zeros(xp_shape, dtype=g.dtype)
    for u in range(kh):
        for v in range(kw):
            gxp[:, u:u + stride * ho:stride, v:v + stride * wo:stride, :] += \
                np.tensordot(g, kernels[u, v], axes=([3], [1]))
    return gxp


def _conv2d_kernel_grad(g, xp, kernels_shape, stride, ho, wo):
    """Gradient of conv2d w.r.t. the kernels."""
    kh, kw = kernels_shape[:2]
    gk = np.zeros(kernels_shape, dtype=g.dtype)
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, u:u + stride * ho:stride, v:v + stride * wo:stride, :]
            gk[u, v] = np.tensordot(xs, g, axes=([0, 1, 2], [0, 1, 2]))
    return gk


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation. x: (H, W, Cin) or (N, H, W, Cin);
    kernels: (kh, kw, Cin, Cout). Output spatial extents floor-divide."""
    if kernels.data.ndim != 4:
        raise ShapeError(f"conv2d kernels must be 4-d, got {kernels.data.shape}")
    single = x.data.ndim == 3
    if single:
        xd = x.data[None]
    elif x.data.ndim == 4:
        xd = x.data
    else:
        raise ShapeError(f"conv2d input must be 3-d or 4-d, got {x.data.shape}")
    if not np.all(np.isfinite(xd)):
        raise NumericalError("conv2d input contains non-finite values")
    n, h, w, cin = xd.shape
    kh, kw, kcin, cout = kernels.data.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {kcin}")
    hp, wp = h + 2 * pad, w + 2 * pad
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} exceeds padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(xd, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xd
    out = np.zeros((n, ho, wo, cout), dtype=xd.dtype)
    kd = kernels.data
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, u:u + stride * ho:stride, v:v + stride * wo:stride, :]
            out += np.tensordot(xs, kd[u, v], axes=([3], [0]))
    out_data = out[0] if single else out

    def back(g):
        gb = g[None] if single else g
        if x.requires_grad:
            gxp = _conv2d_input_grad(gb, kd, xp.shape, stride, ho, wo)
            gx = gxp[:, pad:pad + h, pad:pad + w, :] if pad else gxp
            _accum(x, gx[0] if single else gx)
        if kernels.requires_grad:
            _accum(kernels, _conv2d_kernel_grad(gb, xp, kd.shape, stride, ho, wo))

    return _make(out_data, (x, kernels), back)


def conv1d(x: Tensor, weight: Tensor) -> Tensor:
    """Same-padded 1-D convolution along the last axis with an odd kernel.

    x: (C,) or (N, C); weight: (k,) with k odd. Output length equals input
    length (zero padding of (k-1)/2 on each side).
    """
    if weight.data.ndim != 1:
        raise ShapeError(f"conv1d weight must be 1-d, got {weight.data.shape}")
    k = weight.data.shape[0]
    if k % 2 == 0:
        raise ShapeError(f"conv1d kernel length must be odd, got {k}")
    if x.data.ndim not in (1, 2):
        raise ShapeError(f"conv1d input must be 1-d or 2-d, got {x.data.shape}")
    c = x.data.shape[-1]
    pad = (k - 1) // 2
    pad_spec = [(0, 0)] * (x.data.ndim - 1) + [(pad, pad)]
    xp = np.pad(x.data, pad_spec)
    wd = weight.data
    out = np.zeros_like(x.data)
    for j in range(k):
        out += wd[j] * xp[..., j:j + c]

    def back(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j:j + c] += wd[j] * g
            _accum(x, gxp[..., pad:pad + c])
        if weight.requires_grad:
            gw = np.zeros_like(wd)
            for j in range(k):
                gw[j] = np.sum(xp[..., j:j + c] * g)
            _accum(weight, gw)

    return _make(out, (x, weight), back)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: (H, W, C) -> (C,) or (N, H, W, C) -> (N, C)."""
    if x.data.ndim == 3:
        axes = (0, 1)
    elif x.data.ndim == 4:
        axes = (1, 2)
    else:
        raise ShapeError(f"global_avg_pool input must be 3-d or 4-d, got {x.data.shape}")
    h, w = x.data.shape[axes[0]], x.data.shape[axes[1]]
    out_data = x.data.mean(axis=axes)

    def back(g):
        shape = list(x.data.shape)
        shape[axes[0]] = 1
        shape[axes[1]] = 1
        _accum(x, np.broadcast_to(g.reshape(shape) / (h * w), x.data.shape).copy())

    return _make(out_data, (x,), back)


def scale_channels(z: Tensor, s: Tensor) -> Tensor:
    """Per-channel rescale: z (..., H, W, C) times s (..., C) broadcast spatially."""
    if z.data.ndim == 3 and s.data.ndim == 1:
        axes = (0, 1)
        se = s.data[None, None, :]
    elif z.data.ndim == 4 and s.data.ndim == 2:
        axes = (1, 2)
        se = s.data[:, None, None, :]
    else:
        raise ShapeError(f"scale_channels: z {z.data.shape} vs s {s.data.shape}")
    if z.data.shape[-1] != s.data.shape[-1] or (z.data.ndim == 4 and z.data.shape[0] != s.data.shape[0]):
        raise ShapeError(f"scale_channels: z {z.data.shape} vs s {s.data.shape}")
    out_data = z.data * se

    def back(g):
        _accum(z, g * se)
        _accum(s, np.sum(g * z.data, axis=axes))

    return _make(out_data, (z, s), back)


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """Stabilized -log softmax(logits)[target].

    logits (C,) with an int target gives a scalar loss; logits (N, C) with an
    int vector gives per-example losses (N,).
    """
    ld = logits.data
    if ld.ndim == 1:
        t = int(target)
        if not 0 <= t < ld.shape[0]:
            raise IndexError(f"target {t} out of range for {ld.shape[0]} classes")
        m = ld.max()
        z = ld - m
        ez = np.exp(z)
        lse = np.log(ez.sum())
        out_data = np.asarray(lse - z[t], dtype=ld.dtype)

        def back(g):
            p = ez / ez.sum()
            p[t] -= 1.0
            _accum(logits, g * p)

        return _make(out_data, (logits,), back)

    if ld.ndim == 2:
        t = np.asarray(target, dtype=np.intp)
        n, c = ld.shape
        if t.shape != (n,):
            raise ShapeError(f"targets shape {t.shape} does not match batch {n}")
        if t.size and (t.min() < 0 or t.max() >= c):
            raise IndexError(f"target out of range for {c} classes")
        m = ld.max(axis=1, keepdims=True)
        z = ld - m
        ez = np.exp(z)
        lse = np.log(ez.sum(axis=1))
        out_data = lse - z[np.arange(n), t]

        def back(g):
            p = ez / ez.sum(axis=1, keepdims=True)
            p[np.arange(n), t] -= 1.0
            _accum(logits, g[:, None] * p)

        return _make(out_data, (logits,), back)

    raise ShapeError(f"softmax_cross_entropy logits must be 1-d or 2-d, got {ld.shape}")


# ---------------------------------------------------------------------------
# optimization and verification


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    precision: str = "f64"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {sorted(DTYPES)}, got {self.precision!r}")


def sgd_step(params: Iterable[Tensor], cfg: SgdConfig) -> None:
    """In-place θ <- θ - η·grad for every parameter, then clear grads."""
    lr = cfg.learning_rate
    for p in params:
        if p.grad is None:
            raise ValueError("sgd_step: parameter has no gradient")
        p.data -= lr * p.grad
        p.grad = None


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               coords: Sequence[int] | None = None) -> float:
    """Max relative error between backward grads of f and central differences.

    Perturbs every coordinate of x (or only `coords`, as flat indices) by
    ±eps. The denominator is floored so near-zero gradient pairs do not
    inflate the ratio.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ShapeError("grad_check target must return a scalar")
    if not np.isfinite(out.data):
        raise NumericalError("grad_check: f(x) is non-finite")
    backward(out)
    g = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    x.grad = None
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    worst = 0.0
    with no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data)
            flat[i] = orig - eps
            fm = float(f(x).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericalError("grad_check: perturbed f(x) is non-finite")
            fd = (fp - fm) / (2.0 * eps)
            ad = float(gflat[i])
            err = abs(ad - fd) / max(abs(ad), abs(fd), 1e-3)
            worst = max(worst, err)
    return worst
