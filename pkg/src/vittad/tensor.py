"""Dense float64 tensor engine with reverse-mode autodiff.

The engine is deliberately small: it provides exactly the differentiable
operations the detection pipeline needs (matmul, softmax, layer norm, 3D
convolution, bicubic resize, and a handful of elementwise primitives) on
top of numpy storage, plus a finite-difference gradient validator.

Every tensor is row-major float64 and is checked for NaN/Inf on
construction, so non-finite values are rejected at every op boundary.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, FiniteCheckError, ShapeError

Arrayish = "Tensor | np.ndarray | float | int | list"

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


# ---------------------------------------------------------------------------
# Operation counting (used by the cost model's instrumented counters)
# ---------------------------------------------------------------------------


class OpCounter:
    """Tallies of dense multiply-accumulates and elementwise operations.

    One multiply-accumulate counts as 1 (not 2 FLOPs).  Softmax, norms,
    activations and residual adds go into ``elementwise`` instead of
    ``mult_adds``.  ``attn_matrix_peak`` is the largest attention score
    matrix (in elements) materialized while the counter was active.
    """

    def __init__(self):
        self.mult_adds = 0
        self.elementwise = 0
        self.attn_matrix_peak = 0


_active_counter: OpCounter | None = None


@contextmanager
def count_ops():
    """Yield an :class:`OpCounter` capturing costs of ops run in the block."""
    global _active_counter
    prev = _active_counter
    counter = OpCounter()
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = prev


def _count_mult_adds(n: int) -> None:
    if _active_counter is not None:
        _active_counter.mult_adds += int(n)


def _count_elementwise(n: int) -> None:
    if _active_counter is not None:
        _active_counter.elementwise += int(n)


def record_attn_matrix(elems: int) -> None:
    """Report the size of an attention score matrix to the active counter."""
    if _active_counter is not None:
        _active_counter.attn_matrix_peak = max(
            _active_counter.attn_matrix_peak, int(elems)
        )


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    """A dense float64 array with optional gradient tracking.

    Tensors are immutable after construction except through op outputs;
    ``grad`` is populated by :meth:`backward` and holds a same-shape
    float64 buffer.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FiniteCheckError("tensor contains NaN or Inf values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff -----------------------------------------------------------

    def backward(self, seed: np.ndarray | float | None = None) -> None:
        """Run reverse-mode accumulation from this tensor.

        ``seed`` defaults to 1 and must match this tensor's shape; scalar
        outputs are the common case.
        """
        if not self.requires_grad:
            raise ValueError("backward() called on a tensor without grad tracking")
        if seed is None:
            if self.size != 1:
                raise ValueError("backward() on non-scalar output requires a seed")
            seed_arr = np.ones_like(self.data)
        else:
            seed_arr = np.broadcast_to(np.asarray(seed, dtype=np.float64), self.shape)

        order = _toposort(self)
        self.grad = np.array(seed_arr, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the op graph (graphs can be deep)."""
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
    return order


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _accumulate(parent: Tensor, grad: np.ndarray) -> None:
    if not parent.requires_grad:
        return
    if parent.grad is None:
        parent.grad = np.array(grad, dtype=np.float64)
    else:
        parent.grad = parent.grad + grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes that were broadcast to reach its shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    _count_elementwise(out.size)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _from_op(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    _count_elementwise(out.size)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _from_op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    _count_elementwise(out.size)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _from_op(out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    _count_elementwise(out.size)

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _from_op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _from_op(-a.data, (a,), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data**exponent
    _count_elementwise(out.size)

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _from_op(out, (a,), backward)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    out = np.maximum(a.data, b.data)
    _count_elementwise(out.size)

    def backward(g):
        mask = a.data >= b.data
        _accumulate(a, _unbroadcast(g * mask, a.shape))
        _accumulate(b, _unbroadcast(g * ~mask, b.shape))

    return _from_op(out, (a, b), backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    out = np.minimum(a.data, b.data)
    _count_elementwise(out.size)

    def backward(g):
        mask = a.data <= b.data
        _accumulate(a, _unbroadcast(g * mask, a.shape))
        _accumulate(b, _unbroadcast(g * ~mask, b.shape))

    return _from_op(out, (a, b), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    _count_elementwise(out.size)

    def backward(g):
        _accumulate(a, g * out)

    return _from_op(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    _count_elementwise(out.size)

    def backward(g):
        _accumulate(a, g / a.data)

    return _from_op(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    _count_elementwise(out.size)

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _from_op(out, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    # max(x, 0) + log1p(exp(-|x|)) avoids overflow on both tails
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    _count_elementwise(out.size)

    def backward(g):
        s = np.empty_like(a.data)
        pos = a.data >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
        ez = np.exp(a.data[~pos])
        s[~pos] = ez / (1.0 + ez)
        _accumulate(a, g * s)

    return _from_op(out, (a,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = a.data * cdf
    _count_elementwise(out.size)

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        _accumulate(a, g * (cdf + a.data * pdf))

    return _from_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _from_op(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _from_op(a.data.transpose(axes), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(index)])

    return _from_op(out, tensors, backward)


def getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accumulate(a, full)

    return _from_op(np.array(out), (a,), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    _count_elementwise(a.size)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _from_op(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        denom = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        denom = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(1.0 / denom))


# ---------------------------------------------------------------------------
# Linear algebra and neural-net primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    m, k = a.shape[-2], a.shape[-1]
    n = b.shape[-1]
    batch = int(np.prod(out.shape[:-2])) if out.ndim > 2 else 1
    _count_mult_adds(batch * m * k * n)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _from_op(out, (a, b), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, stabilized by max subtraction.

    Output slices along the axis sum to 1 within 1e-9 and lie in (0, 1).
    """
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    _count_elementwise(out.size)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - inner))

    return _from_op(out, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match C={c}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    _count_elementwise(out.size)

    def backward(g):
        _accumulate(beta, g.reshape(-1, c).sum(axis=0))
        _accumulate(gamma, (g * xhat).reshape(-1, c).sum(axis=0))
        if x.requires_grad:
            gx_hat = g * gamma.data
            m1 = gx_hat.mean(axis=-1, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv_std * (gx_hat - m1 - xhat * m2))

    return _from_op(out, (x, gamma, beta), backward)


# -- convolution ------------------------------------------------------------

_conv3d_index_cache: dict[tuple, np.ndarray] = {}


def _conv3d_geometry(in_shape, kernel_shape, stride, padding):
    t, h, w, cin = in_shape
    kt, kh, kw, kcin, cout = kernel_shape
    if kcin != cin:
        raise ConfigurationError(
            f"conv3d input channels {cin} do not match kernel channels {kcin}"
        )
    st, sh, sw = stride
    pt, ph, pw = padding
    out_dims = []
    for d, k, s, p in ((t, kt, st, pt), (h, kh, sh, ph), (w, kw, sw, pw)):
        o = (d + 2 * p - k) // s + 1
        if o < 1:
            raise ConfigurationError(
                f"conv3d output dim < 1 for input {in_shape}, kernel "
                f"{kernel_shape[:3]}, stride {stride}, padding {padding}"
            )
        out_dims.append(o)
    return tuple(out_dims)


def same_padding(kernel_dims: Sequence[int]) -> tuple[int, ...]:
    """Padding that preserves spatial dims at stride 1; kernel dims must be odd."""
    for k in kernel_dims:
        if k % 2 == 0:
            raise ConfigurationError(
                f"same padding requires odd kernel dims, got {tuple(kernel_dims)}"
            )
    return tuple((k - 1) // 2 for k in kernel_dims)


def _conv3d_scatter_indices(padded_shape, out_dims, kernel_shape, stride):
    key = (padded_shape, out_dims, kernel_shape[:3], stride)
    cached = _conv3d_index_cache.get(key)
    if cached is not None:
        return cached
    tp, hp, wp, cin = padded_shape
    kt, kh, kw = kernel_shape[:3]
    ot, oh, ow = out_dims
    st, sh, sw = stride
    # flat index into the padded volume for every (out position, tap, channel)
    t_idx = (np.arange(ot)[:, None] * st + np.arange(kt)[None, :]).reshape(-1)
    h_idx = (np.arange(oh)[:, None] * sh + np.arange(kh)[None, :]).reshape(-1)
    w_idx = (np.arange(ow)[:, None] * sw + np.arange(kw)[None, :]).reshape(-1)
    tt = t_idx.reshape(ot, 1, 1, kt, 1, 1)
    hh = h_idx.reshape(1, oh, 1, 1, kh, 1)
    ww = w_idx.reshape(1, 1, ow, 1, 1, kw)
    flat = ((tt * hp + hh) * wp + ww) * cin
    flat = np.broadcast_to(
        flat[..., None], (ot, oh, ow, kt, kh, kw, cin)
    ) + np.arange(cin)
    flat = np.ascontiguousarray(flat.reshape(-1))
    _conv3d_index_cache[key] = flat
    return flat


def conv3d(
    x: Tensor,
    kernel: Tensor,
    stride: Sequence[int] = (1, 1, 1),
    padding: Sequence[int] = (0, 0, 0),
) -> Tensor:
    """3D convolution over a T x H x W x Cin volume (channels last).

    Output dims follow floor((d + 2p - k) / s) + 1 per axis.
    """
    stride = tuple(int(s) for s in stride)
    padding = tuple(int(p) for p in padding)
    out_dims = _conv3d_geometry(x.shape, kernel.shape, stride, padding)
    kt, kh, kw, cin, cout = kernel.shape
    st, sh, sw = stride
    pt, ph, pw = padding

    xp = np.pad(x.data, ((pt, pt), (ph, ph), (pw, pw), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(0, 1, 2))
    windows = windows[::st, ::sh, ::sw]  # (ot, oh, ow, cin, kt, kh, kw)
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 6, 3)).reshape(
        -1, kt * kh * kw * cin
    )
    w2d = kernel.data.reshape(-1, cout)
    out = (cols @ w2d).reshape(*out_dims, cout)
    _count_mult_adds(cols.shape[0] * cols.shape[1] * cout)

    def backward(g):
        g2d = g.reshape(-1, cout)
        _accumulate(kernel, (cols.T @ g2d).reshape(kernel.shape))
        if x.requires_grad:
            dcols = g2d @ w2d.T
            padded = np.zeros(xp.size, dtype=np.float64)
            idx = _conv3d_scatter_indices(xp.shape, out_dims, kernel.shape, stride)
            np.add.at(padded, idx, dcols.reshape(-1))
            padded = padded.reshape(xp.shape)
            t, h, w, _ = x.shape
            _accumulate(x, padded[pt : pt + t, ph : ph + h, pw : pw + w, :])

    return _from_op(out, (x, kernel), backward)


def conv1d(
    x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """Temporal convolution over a T x Cin sequence (channels last)."""
    t, cin = x.shape
    k, kcin, cout = kernel.shape
    if kcin != cin:
        raise ConfigurationError(
            f"conv1d input channels {cin} do not match kernel channels {kcin}"
        )
    ot = (t + 2 * padding - k) // stride + 1
    if ot < 1:
        raise ConfigurationError(
            f"conv1d output length < 1 for T={t}, k={k}, stride={stride}, padding={padding}"
        )
    xp = np.pad(x.data, ((padding, padding), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)[::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(ot, k * cin)
    w2d = kernel.data.reshape(k * cin, cout)
    out = cols @ w2d
    _count_mult_adds(ot * k * cin * cout)

    def backward(g):
        _accumulate(kernel, (cols.T @ g).reshape(kernel.shape))
        if x.requires_grad:
            dcols = (g @ w2d.T).reshape(ot, k, cin)
            padded = np.zeros_like(xp)
            for tap in range(k):
                padded[tap : tap + ot * stride : stride] += dcols[:, tap, :]
            _accumulate(x, padded[padding : padding + t])

    return _from_op(out, (x, kernel), backward)


# -- bicubic resize ----------------------------------------------------------


def _cubic_kernel(d: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel (the classic a=-0.5 variant)."""
    d = np.abs(d)
    out = np.zeros_like(d)
    near = d <= 1.0
    far = (d > 1.0) & (d < 2.0)
    out[near] = (a + 2.0) * d[near] ** 3 - (a + 3.0) * d[near] ** 2 + 1.0
    out[far] = a * d[far] ** 3 - 5.0 * a * d[far] ** 2 + 8.0 * a * d[far] - 4.0 * a
    return out


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) cubic interpolation matrix.

    Uses half-pixel centers, so equal sizes produce an exact identity and
    constants are preserved for any size (taps are clamped at the borders,
    which keeps each row summing to 1).
    """
    mat = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        base = math.floor(src)
        taps = np.arange(base - 1, base + 3)
        weights = _cubic_kernel(taps - src)
        np.add.at(mat[i], np.clip(taps, 0, n_in - 1), weights)
    return mat


def bicubic_resize_2d(pe: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable channel-wise bicubic resize of an h x w x C grid."""
    if pe.ndim != 3:
        raise ShapeError(f"bicubic_resize_2d expects h x w x C input, got {pe.shape}")
    h, w, c = pe.shape
    if h < 2 or w < 2:
        raise ConfigurationError(f"bicubic_resize_2d requires h, w >= 2, got {h}x{w}")
    if out_h < 1 or out_w < 1:
        raise ConfigurationError(
            f"bicubic_resize_2d output dims must be >= 1, got {out_h}x{out_w}"
        )
    if (out_h, out_w) == (h, w):
        def backward_same(g):
            _accumulate(pe, g)

        return _from_op(pe.data.copy(), (pe,), backward_same)

    wh = _resize_matrix(h, out_h)
    ww = _resize_matrix(w, out_w)
    tmp = np.tensordot(wh, pe.data, axes=(1, 0))  # (out_h, w, C)
    out = np.tensordot(ww, tmp, axes=(1, 1)).transpose(1, 0, 2)
    _count_mult_adds(out_h * h * w * c + out_h * out_w * w * c)

    def backward(g):
        gtmp = np.tensordot(ww.T, g, axes=(1, 1)).transpose(1, 0, 2)  # (out_h, w, C)
        _accumulate(pe, np.tensordot(wh.T, gtmp, axes=(1, 0)))

    return _from_op(out, (pe,), backward)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

INIT_SCHEMES = ("truncated_normal", "zeros", "identity_scaled")


class Parameter:
    """A named, trainable tensor with a recorded initialization scheme."""

    def __init__(self, data, name: str, init_scheme: str = "truncated_normal"):
        if init_scheme not in INIT_SCHEMES:
            raise ConfigurationError(f"unknown init scheme: {init_scheme!r}")
        self.tensor = Tensor(data, requires_grad=True)
        self.name = name
        self.init_scheme = init_scheme

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def assign(self, data: np.ndarray) -> None:
        """Replace the value (used by the optimizer and checkpoint loading)."""
        arr = np.asarray(data, dtype=np.float64)
        if arr.shape != self.shape:
            raise ShapeError(
                f"parameter {self.name!r} has shape {self.shape}, got {arr.shape}"
            )
        self.tensor = Tensor(arr, requires_grad=True)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, init={self.init_scheme})"


def _truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled until all draws lie within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def make_parameter(
    name: str,
    shape: Sequence[int],
    scheme: str,
    rng: np.random.Generator,
    std: float = 0.02,
) -> Parameter:
    shape = tuple(shape)
    if scheme == "truncated_normal":
        data = _truncated_normal(rng, shape, std)
    elif scheme == "zeros":
        data = np.zeros(shape)
    elif scheme == "identity_scaled":
        data = np.ones(shape)
    else:
        raise ConfigurationError(f"unknown init scheme: {scheme!r}")
    return Parameter(data, name=name, init_scheme=scheme)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Parameter],
    eps: float = 1e-5,
) -> float:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` must evaluate to a finite scalar using the current parameter
    values.  Returns the maximum elementwise relative error, where each
    element's error is |analytic - numeric| / max(|analytic|, |numeric|, 1).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    if out.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise FiniteCheckError("grad_check objective is non-finite")
    out.backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else np.array(p.grad) for p in params
    ]

    max_rel = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            arr = p.tensor.data
            numeric = np.zeros_like(arr)
            for idx in np.ndindex(*arr.shape):
                orig = arr[idx]
                arr[idx] = orig + eps
                hi = float(f().data)
                arr[idx] = orig - eps
                lo = float(f().data)
                arr[idx] = orig
                numeric[idx] = (hi - lo) / (2.0 * eps)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1.0)
            rel = np.abs(a - numeric) / denom
            if rel.size:
                max_rel = max(max_rel, float(rel.max()))
    return max_rel
