"""Dense tensors with reverse-mode automatic differentiation.

Values live in row-major numpy arrays (float32 for training, float64 for
numerical verification). Each operation computes its result eagerly and, when
gradients are enabled and some input requires them, attaches a backward
closure to the output. ``Tensor.backward()`` on a scalar walks the recorded
graph in reverse topological order and accumulates gradients into every
tensor that participated.

Broadcasting follows numpy semantics; backward passes sum gradients over the
broadcast axes. Outputs of public operations are expected to stay finite;
feeding values that overflow to inf/nan violates the contract and is only
checked where cheap (losses, serialization, gradient checks).
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import ShapeError

FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure-value forward passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_grad_shared")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = None
        self._parents = ()
        self._grad_shared = False

    # -- basic properties ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # -- graph machinery ----------------------------------------------------

    def _tracked(self) -> bool:
        return self.requires_grad or self._backward is not None

    def _accumulate(self, grad: np.ndarray):
        # First contribution adopts the buffer without copying; a second
        # contribution must not mutate it (ops may hand the same array to
        # several parents), so it reallocates once.
        if self.grad is None:
            if grad.dtype != self.data.dtype:
                grad = grad.astype(self.data.dtype)
            self.grad = grad
            self._grad_shared = True
        elif self._grad_shared:
            self.grad = self.grad + grad
            self._grad_shared = False
        else:
            self.grad += grad

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        # Iterative topological sort; model graphs exceed the recursion limit.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None  # free intermediate buffers; leaves keep theirs

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # method aliases used throughout the model code
    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        if axis is None:
            return sum_all(self)
        return sum_axis(self, axis, keepdims=keepdims)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)


def _result(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Wrap an op result, recording the backward closure when needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._backward = None
    out._parents = ()
    out._grad_shared = False
    if _grad_enabled and any(p._tracked() for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_same_dtype(a: Tensor, b: Tensor, op: str):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.data.dtype.name} vs {b.data.dtype.name}")


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "add")
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "mul")
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * np.asarray(s, dtype=a.data.dtype)

    def backward(g):
        a._accumulate(g * np.asarray(s, dtype=a.data.dtype))

    return _result(data, (a,), backward)


def shift(a: Tensor, c: float) -> Tensor:
    """Add a python scalar elementwise."""
    data = a.data + np.asarray(float(c), dtype=a.data.dtype)

    def backward(g):
        a._accumulate(g)

    return _result(data, (a,), backward)


def neg(a: Tensor) -> Tensor:
    data = -a.data

    def backward(g):
        a._accumulate(-g)

    return _result(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; operands of rank >= 2, numpy batch broadcasting."""
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must have rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")

    if a.ndim > 2 and b.ndim == 2:
        # flatten leading axes into one GEMM instead of a strided batch loop
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        data = np.matmul(a2, b.data).reshape(lead + (b.shape[-1],))

        def backward(g):
            g2 = g.reshape(-1, b.shape[-1])
            a._accumulate(np.matmul(g2, b.data.T).reshape(a.data.shape))
            b._accumulate(np.matmul(a2.T, g2))

        return _result(data, (a, b), backward)

    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _result(data, (a, b), backward)


# -- nonlinearities -----------------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        a._accumulate(g * data * (1.0 - data))

    return _result(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - data * data))

    return _result(data, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Smooth gating activation (tanh form), used inside encoder FFNs."""
    x = a.data
    x2 = x * x
    inner = x2 * x
    inner *= 0.044715
    inner += x
    inner *= _GELU_C
    t = np.tanh(inner)
    t += 1.0  # t now holds 1 + tanh(inner)
    data = 0.5 * x * t

    def backward(g):
        # d/dx [0.5 x (1+t)] with t = tanh(inner):
        #   0.5 (1+t) + 0.5 x (1-t^2) inner'
        tt = t * (2.0 - t)  # 1 - tanh^2 given t = 1 + tanh
        tt *= _GELU_C * (1.0 + 0.134145 * x2)
        tt *= x
        tt += t
        tt *= 0.5
        tt *= g
        a._accumulate(tt)

    return _result(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _result(data, (a,), backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through the interior, zero at the rails."""
    data = np.clip(a.data, lo, hi)
    mask = ((a.data > lo) & (a.data < hi)).astype(a.data.dtype)

    def backward(g):
        a._accumulate(g * mask)

    return _result(data, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Normalized exponentials along ``axis``, max-subtracted for stability."""
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accumulate(data * (g - dot))

    return _result(data, (a,), backward)


# -- shape manipulation ---------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = np.ascontiguousarray(a.data).reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _result(data, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    data = a.data.transpose(axes)  # lazy view; consumers copy if they must
    inverse = np.argsort(axes)

    def backward(g):
        a._accumulate(np.ascontiguousarray(g.transpose(inverse)))

    return _result(data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t, "concat")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}"
        ) from None
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            t._accumulate(g[tuple(index)])

    return _result(data, tuple(tensors), backward)


def take_index(a: Tensor, index: int, axis: int = 0) -> Tensor:
    """Select a single slice along an axis; gradient scatters back into it."""
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"take_index: axis {axis} out of range for shape {a.shape}")
    axis = axis % a.ndim
    if not 0 <= index < a.shape[axis]:
        raise ShapeError(f"take_index: index {index} out of range for shape {a.shape}")
    data = np.ascontiguousarray(np.take(a.data, index, axis=axis))

    def backward(g):
        full = np.zeros_like(a.data)
        sl = [slice(None)] * a.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        a._accumulate(full)

    return _result(data, (a,), backward)


def take_row(a: Tensor, index: int) -> Tensor:
    """Select one row along axis 0; gradient scatters back into it."""
    return take_index(a, index, axis=0)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"sum: axis {axis} out of range for shape {a.shape}")
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _result(data, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _result(data, (a,), backward)


# -- structured operations ------------------------------------------------------

_POOL_MODES = ("spatial_avg", "spatial_max", "channel_avg", "channel_max", "global_avg")


def pool(a: Tensor, mode: str) -> Tensor:
    """Pool a [C,H,W] or [B,C,H,W] map.

    spatial_avg / spatial_max / global_avg reduce H,W to a channel vector;
    channel_avg / channel_max reduce C to a single-channel map. Max pooling
    routes its gradient to the first maximal element of each reduction.
    """
    if mode not in _POOL_MODES:
        raise ShapeError(f"pool: unknown mode {mode!r}")
    if a.ndim not in (3, 4):
        raise ShapeError(f"pool: input must be [C,H,W] or [B,C,H,W], got {a.shape}")
    x = a.data
    if mode in ("spatial_avg", "global_avg"):
        data = x.mean(axis=(-2, -1))

        def backward(g):
            hw = a.shape[-2] * a.shape[-1]
            a._accumulate(np.broadcast_to((g / hw)[..., None, None], a.data.shape).copy())

    elif mode == "spatial_max":
        flat = x.reshape(x.shape[:-2] + (-1,))
        idx = flat.argmax(axis=-1)
        data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

        def backward(g):
            grad = np.zeros_like(flat)
            np.put_along_axis(grad, idx[..., None], g[..., None], axis=-1)
            a._accumulate(grad.reshape(a.data.shape))

    elif mode == "channel_avg":
        data = x.mean(axis=-3, keepdims=True)

        def backward(g):
            c = a.shape[-3]
            a._accumulate(np.broadcast_to(g / c, a.data.shape).copy())

    else:  # channel_max
        idx = x.argmax(axis=-3)
        data = x.max(axis=-3, keepdims=True)

        def backward(g):
            grad = np.zeros_like(x)
            np.put_along_axis(grad, np.expand_dims(idx, -3), g, axis=-3)
            a._accumulate(grad)

    data = np.ascontiguousarray(data)
    return _result(data, (a,), backward)


def conv2d(a: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-padded 2D cross-correlation for 1x1 / 3x3 kernels.

    Input [C,H,W] or [B,C,H,W]; weight [O,C,kh,kw]; bias [O]. Zero padding
    keeps the spatial size.
    """
    _check_same_dtype(a, weight, "conv2d")
    _check_same_dtype(a, bias, "conv2d")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be [O,C,kh,kw], got {weight.shape}")
    if a.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be [C,H,W] or [B,C,H,W], got {a.shape}")
    out_ch, in_ch, kh, kw = weight.shape
    if kh not in (1, 3) or kw not in (1, 3):
        raise ShapeError(f"conv2d: kernel sizes must be 1 or 3, got {kh}x{kw}")
    squeeze = a.ndim == 3
    x = a.data[None] if squeeze else a.data
    if x.shape[1] != in_ch:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels but weight expects {in_ch}"
        )
    if bias.shape != (out_ch,):
        raise ShapeError(f"conv2d: bias must be [{out_ch}], got {bias.shape}")
    b, _, h, w = x.shape

    if kh == 1 and kw == 1:
        # pointwise: a channel mixing matmul
        w2 = weight.data.reshape(out_ch, in_ch)
        data = np.matmul(w2, x.reshape(b, in_ch, h * w)).reshape(b, out_ch, h, w)
        data = data + bias.data[:, None, None]

        def backward(g):
            g4 = (g[None] if squeeze else g).reshape(b, out_ch, h * w)
            bias._accumulate(g4.sum(axis=(0, 2)))
            xr = x.reshape(b, in_ch, h * w)
            dw = np.einsum("boh,bch->oc", g4, xr)
            weight._accumulate(dw.reshape(weight.data.shape))
            gx = np.matmul(w2.T, g4).reshape(b, in_ch, h, w)
            a._accumulate(gx[0] if squeeze else gx)

        return _result(
            np.ascontiguousarray(data[0] if squeeze else data), (a, weight, bias), backward
        )

    def _padded(arr, py, px):
        out = np.zeros(arr.shape[:2] + (arr.shape[2] + 2 * py, arr.shape[3] + 2 * px),
                       dtype=arr.dtype)
        out[:, :, py:py + arr.shape[2], px:px + arr.shape[3]] = arr
        return out

    ph, pw = kh // 2, kw // 2
    xp = _padded(x, ph, pw)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # contract (c, i, j): tensordot lowers to one GEMM
    data = np.tensordot(weight.data, win, axes=([1, 2, 3], [1, 4, 5]))  # [O,B,H,W]
    data = np.ascontiguousarray(data.transpose(1, 0, 2, 3).astype(a.data.dtype, copy=False))
    data += bias.data[:, None, None]

    def backward(g):
        g4 = g[None] if squeeze else g
        bias._accumulate(g4.sum(axis=(0, 2, 3)))
        dw = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))  # [O,C,kh,kw]
        weight._accumulate(dw.astype(weight.data.dtype, copy=False))
        gp = _padded(np.ascontiguousarray(g4), kh - 1 - ph, kw - 1 - pw)
        gwin = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
        wflip = np.ascontiguousarray(weight.data[:, :, ::-1, ::-1])
        gx = np.tensordot(wflip, gwin, axes=([0, 2, 3], [1, 4, 5]))  # [C,B,H,W]
        gx = np.ascontiguousarray(gx.transpose(1, 0, 2, 3).astype(a.data.dtype, copy=False))
        a._accumulate(gx[0] if squeeze else gx)

    return _result(data[0] if squeeze else data, (a, weight, bias), backward)


def layer_norm(a: Tensor, gain: Tensor, shift_p: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    _check_same_dtype(a, gain, "layer_norm")
    _check_same_dtype(a, shift_p, "layer_norm")
    if eps <= 0:
        raise ShapeError("layer_norm: eps must be positive")
    d = a.shape[-1]
    if gain.shape != (d,) or shift_p.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/shift must be [{d}], got {gain.shape} and {shift_p.shape}"
        )
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = np.maximum((x * x).mean(axis=-1, keepdims=True) - mu * mu, 0.0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    data = xhat * gain.data + shift_p.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gain._accumulate((g * xhat).sum(axis=lead))
        shift_p._accumulate(g.sum(axis=lead))
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        a._accumulate(dx.astype(a.data.dtype, copy=False))

    return _result(data.astype(a.data.dtype, copy=False), (a, gain, shift_p), backward)


def broadcast_mul(attn: Tensor, x: Tensor) -> Tensor:
    """Apply an attention map to a feature map.

    ``attn`` is either a channel vector ([C] or [B,C]) scaling every spatial
    position, or a single-channel spatial map ([1,H,W] or [B,1,H,W]) scaling
    every channel of ``x`` ([C,H,W] or [B,C,H,W]).
    """
    if x.ndim not in (3, 4):
        raise ShapeError(f"broadcast_mul: feature map must be [C,H,W] or [B,C,H,W], got {x.shape}")
    c = x.shape[-3]
    if attn.shape == (c,) or (attn.ndim == 2 and x.ndim == 4 and attn.shape == x.shape[:1] + (c,)):
        vec = reshape(attn, attn.shape + (1, 1))
        return mul(vec, x)
    if attn.shape[-3:] == (1,) + x.shape[-2:] and attn.ndim == x.ndim:
        return mul(attn, x)
    raise ShapeError(
        f"broadcast_mul: attention shape {attn.shape} does not match feature map {x.shape}"
    )


def elementwise(x: Tensor, op: str, other=None) -> Tensor:
    """Dispatch table covering the primitive elementwise operations."""
    if op == "sigmoid":
        return sigmoid(x)
    if op == "tanh":
        return tanh(x)
    if op == "add":
        return add(x, other)
    if op == "mul":
        return mul(x, other)
    if op == "scale":
        return scale(x, other)
    if op == "broadcast_mul":
        return broadcast_mul(x, other)
    raise ShapeError(f"elementwise: unknown op {op!r}")
