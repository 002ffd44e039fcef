"""Depth-guided attention.

A depth feature map steers attention over a paired modality's feature map in
two stages. Channel attention pools the depth map spatially (average plus
max), pushes the summed vector through one sigmoid-activated affine layer,
and scales the paired map's channels. Spatial attention pools the depth map
over channels (average and max, concatenated to two channels), applies a
sigmoid-activated 3x3 convolution, and scales the paired map's positions.
The enhanced map is then average-pooled to a per-frame feature vector.

Two independent instances are used: one for the pedestrian crop guided by
its depth crop, one for the scene semantic map guided by the scene depth
map. The "addition" mode bypasses both attention stages and simply adds the
two downsampled maps (ablation wiring).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError
from .nn import Linear, Module, trunc_normal
from .tensor import Tensor, add, broadcast_mul, concat, conv2d, pool, sigmoid


class DepthGuidedAttention(Module):
    """One guided/depth pair: 1x1 downsampling plus channel and spatial gates."""

    def __init__(self, in_dim: int, feature_dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        point_std = math.sqrt(2.0 / (in_dim + feature_dim))
        self.conv_guided_w = Tensor(
            trunc_normal(rng, (feature_dim, in_dim, 1, 1), std=point_std, dtype=dtype),
            requires_grad=True)
        self.conv_guided_b = Tensor(np.zeros(feature_dim, dtype=dtype), requires_grad=True)
        self.conv_depth_w = Tensor(
            trunc_normal(rng, (feature_dim, in_dim, 1, 1), std=point_std, dtype=dtype),
            requires_grad=True)
        self.conv_depth_b = Tensor(np.zeros(feature_dim, dtype=dtype), requires_grad=True)
        self.fc = Linear(feature_dim, feature_dim, rng, dtype)
        self.conv_spatial_w = Tensor(
            trunc_normal(rng, (1, 2, 3, 3), std=math.sqrt(2.0 / 19.0), dtype=dtype),
            requires_grad=True)
        self.conv_spatial_b = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
        self.feature_dim = feature_dim

    def downsample_guided(self, f: Tensor) -> Tensor:
        return conv2d(f, self.conv_guided_w, self.conv_guided_b)

    def downsample_depth(self, f: Tensor) -> Tensor:
        return conv2d(f, self.conv_depth_w, self.conv_depth_b)

    def channel_attention(self, f_depth: Tensor) -> Tensor:
        """Per-channel gate in (0,1): sigmoid(fc(avg_pool + max_pool))."""
        pooled = add(pool(f_depth, "spatial_avg"), pool(f_depth, "spatial_max"))
        return sigmoid(self.fc(pooled))

    def dgca(self, f_guided: Tensor, f_depth: Tensor) -> Tensor:
        if f_guided.shape != f_depth.shape:
            raise ShapeError(f"dgca: shapes differ, {f_guided.shape} vs {f_depth.shape}")
        return broadcast_mul(self.channel_attention(f_depth), f_guided)

    def spatial_attention(self, f_depth: Tensor) -> Tensor:
        """Single-channel gate map in (0,1) from pooled depth channels."""
        stacked = concat([pool(f_depth, "channel_avg"), pool(f_depth, "channel_max")], axis=-3)
        return sigmoid(conv2d(stacked, self.conv_spatial_w, self.conv_spatial_b))

    def dgsa(self, f_enhanced: Tensor, f_depth: Tensor) -> Tensor:
        if f_enhanced.shape != f_depth.shape:
            raise ShapeError(f"dgsa: shapes differ, {f_enhanced.shape} vs {f_depth.shape}")
        return broadcast_mul(self.spatial_attention(f_depth), f_enhanced)

    def fuse(self, f_guided: Tensor, f_depth: Tensor, mode: str = "attention",
             collect: dict | None = None) -> Tensor:
        """Full block: downsample both streams, gate, pool to a vector.

        Input maps are [D,G,G] or [F,D,G,G]; the result is [C] or [F,C].
        ``collect``, when given, receives the raw channel and spatial
        attention values under keys "ca" and "sa".
        """
        guided = self.downsample_guided(f_guided)
        depth = self.downsample_depth(f_depth)
        if mode == "addition":
            return pool(add(guided, depth), "global_avg")
        if mode != "attention":
            raise ShapeError(f"dga: unknown mode {mode!r}")
        ca = self.channel_attention(depth)
        enhanced = broadcast_mul(ca, guided)
        sa = self.spatial_attention(depth)
        gated = broadcast_mul(sa, enhanced)
        if collect is not None:
            collect.setdefault("ca", []).append(ca.data)
            collect.setdefault("sa", []).append(sa.data)
        return pool(gated, "global_avg")
