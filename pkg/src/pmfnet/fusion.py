"""Modality and temporal attention fusion, plus the prediction head.

Per frame, the motion, local, and global feature vectors are scored by a
shared additive-attention scorer, softmax-normalized into modality weights,
combined as a weighted sum, and mixed through an affine layer with tanh.
The fused per-frame sequence is then encoded by a transformer stack whose
attention maps are kept as diagnostics, and the last frame's encoding is
mapped to a crossing probability by a small MLP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn import Encoder, Linear, Module, MultiHeadAttention, dropout_mask, init_matrix
from .tensor import (
    Tensor,
    add,
    concat,
    matmul,
    mul,
    reshape,
    sigmoid,
    softmax,
    sum_axis,
    take_row,
    tanh,
)

MODALITY_ORDER = ("motion", "local", "global")


@dataclass
class Diagnostics:
    """Attention byproducts of one forward pass.

    ``modality_weights`` rows and every ``temporal_attention`` row along the
    last axis each sum to 1.
    """

    modality_weights: np.ndarray     # [N, 3] in order (motion, local, global)
    temporal_attention: np.ndarray   # [layers, heads, N, N]


class ModalityFusion(Module):
    """Shared-parameter additive attention over modality feature vectors."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.w_e = Tensor(init_matrix(rng, (dim, dim), dtype=dtype), requires_grad=True)
        self.b_e = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.w_s = Tensor(init_matrix(rng, (dim, 1), dtype=dtype), requires_grad=True)
        self.b_s = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
        self.w_c = Tensor(init_matrix(rng, (dim, dim), dtype=dtype), requires_grad=True)
        self.b_c = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.dim = dim

    def scores(self, features: Tensor) -> Tensor:
        """Score stacked modality features [..., k, d] to [..., k]."""
        if features.shape[-1] != self.dim:
            raise ShapeError(f"modality features must end in width {self.dim}, got {features.shape}")
        hidden = tanh(add(matmul(features, self.w_e), self.b_e))
        raw = add(matmul(hidden, self.w_s), self.b_s)
        return reshape(raw, raw.shape[:-1])

    def weights(self, scores: Tensor) -> Tensor:
        return softmax(scores, axis=-1)

    def fuse(self, features: Tensor, mode: str = "attention"):
        """Weighted-sum fusion of [..., k, d] features.

        Returns (fused [..., d], weights [..., k]). "addition" mode replaces
        the learned weighting with a uniform mean over modalities.
        """
        k = features.shape[-2]
        if mode == "addition":
            alpha = Tensor(np.full(features.shape[:-1], 1.0 / k, dtype=features.dtype))
        elif mode == "attention":
            alpha = self.weights(self.scores(features))
        else:
            raise ShapeError(f"modality fusion: unknown mode {mode!r}")
        weighted = sum_axis(mul(reshape(alpha, alpha.shape + (1,)), features), axis=-2)
        squeeze = weighted.ndim == 1
        if squeeze:
            weighted = reshape(weighted, (1,) + weighted.shape)
        fused = tanh(add(matmul(weighted, self.w_c), self.b_c))
        if squeeze:
            fused = reshape(fused, (fused.shape[-1],))
        return fused, alpha


class TemporalEncoder(Module):
    """Transformer stack over the fused frame sequence, keeping attention maps."""

    def __init__(self, dim: int, heads: int, layers: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.encoder = Encoder(dim, heads, 4 * dim, layers, rng, dtype)

    def __call__(self, x: Tensor):
        """Encode [N,d] or [B,N,d]; attention maps are [layers, heads, N, N]
        (batched: [B, layers, heads, N, N])."""
        encoded, maps = self.encoder(x, collect_attn=True)
        attn = np.stack([m.data for m in maps])
        if attn.ndim == 5:  # [layers, B, heads, N, N] -> batch first
            attn = np.ascontiguousarray(attn.transpose(1, 0, 2, 3, 4))
        return encoded, attn


def multi_head_attention(x: Tensor, attn: MultiHeadAttention):
    """Single attention layer applied to [N, D]; returns (output, maps)."""
    return attn(x)


class PredictHead(Module):
    """Affine, tanh, dropout, affine, sigmoid: one crossing probability."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32,
                 dropout: float = 0.2):
        hidden = max(1, dim // 2)
        self.lin1 = Linear(dim, hidden, rng, dtype)
        self.lin2 = Linear(hidden, 1, rng, dtype)
        self.dropout = dropout
        self.dtype = dtype

    def weight_tensors(self):
        """Weight matrices covered by the L2 penalty (biases excluded)."""
        return [self.lin1.w, self.lin2.w]

    def __call__(self, f_last: Tensor, train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        """Map [d] or [B,d] features to a probability: () or [B]."""
        squeeze = f_last.ndim == 1
        x = reshape(f_last, (1, f_last.shape[-1])) if squeeze else f_last
        h = tanh(self.lin1(x))
        if train and self.dropout > 0.0:
            if rng is None:
                raise ShapeError("training forward needs an rng for dropout")
            mask = dropout_mask(rng, h.shape, self.dropout, h.data.dtype.type)
            h = mul(h, Tensor(mask))
        p = sigmoid(self.lin2(h))
        return reshape(p, () if squeeze else (x.shape[0],))
