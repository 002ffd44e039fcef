"""Neural building blocks shared by the extraction and fusion modules."""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError
from .tensor import (
    Tensor,
    add,
    concat,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    scale,
    softmax,
    transpose,
)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal samples with |x| <= 2*std, resampled outside the bound."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def init_matrix(rng: np.random.Generator, shape, std=None, dtype=np.float32) -> np.ndarray:
    """Weight init: explicit std when given, else Xavier from fan-in/fan-out."""
    if std is None:
        fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
        fan_out = shape[-1]
        std = math.sqrt(2.0 / (fan_in + fan_out))
    return trunc_normal(rng, shape, std=std, dtype=dtype)


class Module:
    """Parameter container; children are discovered by attribute walking."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Tensor):
                        if item.requires_grad:
                            yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None


class Linear(Module):
    """Affine map y = x @ w + b with w of shape [in_dim, out_dim]."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float32, bias: bool = True, std=None):
        self.w = Tensor(init_matrix(rng, (in_dim, out_dim), std=std, dtype=dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 1
        if squeeze:
            x = reshape(x, (1,) + x.shape)
        y = matmul(x, self.w)
        if self.b is not None:
            y = add(y, self.b)
        return reshape(y, (y.shape[-1],)) if squeeze else y


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.shift, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention with per-head projection matrices.

    Each head i owns wq[i], wk[i], wv[i] of shape [dim, head_dim]; the
    concatenated head outputs are mixed by wo of shape [dim, dim]. Returns
    both the output sequence and the attention maps [heads, N, N] (batched:
    [B, heads, N, N]).
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32,
                 std=None):
        if dim % heads != 0:
            raise ShapeError(f"attention: dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = [Tensor(init_matrix(rng, (dim, self.head_dim), std=std, dtype=dtype),
                          requires_grad=True) for _ in range(heads)]
        self.wk = [Tensor(init_matrix(rng, (dim, self.head_dim), std=std, dtype=dtype),
                          requires_grad=True) for _ in range(heads)]
        self.wv = [Tensor(init_matrix(rng, (dim, self.head_dim), std=std, dtype=dtype),
                          requires_grad=True) for _ in range(heads)]
        self.wo = Tensor(init_matrix(rng, (heads * self.head_dim, dim), std=std, dtype=dtype),
                         requires_grad=True)

    def _project(self, x: Tensor, mats) -> Tensor:
        # [B,N,D] @ [D,H*hd] -> [B,H,N,hd]
        b, n, _ = x.shape
        joined = matmul(x, concat(mats, axis=1))
        return transpose(reshape(joined, (b, n, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x: Tensor):
        squeeze = x.ndim == 2
        if squeeze:
            x = reshape(x, (1,) + x.shape)
        if x.ndim != 3:
            raise ShapeError(f"attention: input must be [N,D] or [B,N,D], got {x.shape}")
        b, n, d = x.shape
        q = self._project(x, self.wq)
        k = self._project(x, self.wk)
        v = self._project(x, self.wv)
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        attn = softmax(scores, axis=-1)
        ctx = matmul(attn, v)  # [B,H,N,hd]
        merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, n, self.heads * self.head_dim))
        out = matmul(merged, self.wo)
        if squeeze:
            out = reshape(out, (n, d))
            attn = reshape(attn, attn.shape[1:])
        return out, attn


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32,
                 std=None):
        self.lin1 = Linear(dim, hidden, rng, dtype, std=std)
        self.lin2 = Linear(hidden, dim, rng, dtype, std=std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(gelu(self.lin1(x)))


class EncoderBlock(Module):
    """Pre-norm residual block: attention then feed-forward."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, rng: np.random.Generator,
                 dtype=np.float32, std=None):
        self.norm1 = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype, std=std)
        self.norm2 = LayerNorm(dim, dtype)
        self.ffn = FeedForward(dim, ffn_dim, rng, dtype, std=std)

    def __call__(self, x: Tensor):
        attended, attn = self.attn(self.norm1(x))
        x = add(x, attended)
        x = add(x, self.ffn(self.norm2(x)))
        return x, attn


class Encoder(Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int, layers: int,
                 rng: np.random.Generator, dtype=np.float32, std=None):
        self.blocks = [EncoderBlock(dim, heads, ffn_dim, rng, dtype, std=std)
                       for _ in range(layers)]

    def __call__(self, x: Tensor, collect_attn: bool = False):
        maps = [] if collect_attn else None
        for block in self.blocks:
            x, attn = block(x)
            if collect_attn:
                maps.append(attn)
        return x, maps


_PE_CACHE: dict = {}


def sinusoidal_encoding(n: int, d: int, dtype=np.float32) -> np.ndarray:
    """Interleaved sin/cos position code: pe[t, 2i] = sin(t / 10000^(2i/d))."""
    if d % 2 != 0:
        raise ShapeError(f"sinusoidal encoding needs an even width, got {d}")
    key = (n, d, np.dtype(dtype).str)
    cached = _PE_CACHE.get(key)
    if cached is not None:
        return cached
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)[None, :]
    pe = np.empty((n, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    result = pe.astype(dtype)
    result.flags.writeable = False
    _PE_CACHE[key] = result
    return result


def dropout_mask(rng: np.random.Generator, shape, p: float, dtype) -> np.ndarray:
    """Inverted-dropout mask: keep with probability 1-p, scaled by 1/(1-p)."""
    keep = (rng.random(shape) >= p).astype(dtype)
    return keep / dtype(1.0 - p)
