"""Visual feature extraction.

Four independent patch-transformer backbones turn the per-frame visual
modalities (pedestrian crop, pedestrian depth crop, scene semantic map,
scene depth map) into spatial feature grids [embed_dim, G, G]. Depth inputs
arrive single-channel and are replicated to three channels so every backbone
shares one patch-embedding shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .nn import Encoder, Linear, Module, trunc_normal
from .tensor import Tensor, add, reshape, transpose

VISUAL_MODALITIES = ("local_rgb", "local_depth", "global_sem", "global_depth")


@dataclass
class VitConfig:
    image_size: int = 32
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    in_channels: int = 3

    def validate(self):
        if self.image_size % self.patch_size != 0:
            raise ShapeError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}"
            )
        if self.embed_dim % self.heads != 0:
            raise ShapeError(f"embed dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.in_channels * self.patch_size * self.patch_size


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Cut [C,H,W] into non-overlapping patch tokens [G*G, C*p*p].

    Tokens run row-major over the patch grid; within a token the layout is
    channel-major, then row-major over pixels.
    """
    c, h, w = image.shape
    if h != w:
        raise ShapeError(f"patchify: image must be square, got {image.shape}")
    if h % patch_size != 0:
        raise ShapeError(f"patchify: size {h} not divisible by patch {patch_size}")
    g = h // patch_size
    tiled = image.reshape(c, g, patch_size, g, patch_size)
    return np.ascontiguousarray(tiled.transpose(1, 3, 0, 2, 4)).reshape(g * g, -1)


def unpatchify(tokens: np.ndarray, channels: int, image_size: int, patch_size: int) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    g = image_size // patch_size
    tiled = tokens.reshape(g, g, channels, patch_size, patch_size)
    return np.ascontiguousarray(tiled.transpose(2, 0, 3, 1, 4)).reshape(channels, image_size, image_size)


def patchify_frames(images: np.ndarray, patch_size: int) -> np.ndarray:
    """Vectorized :func:`patchify` over a frame stack [F,C,H,W]."""
    f, c, h, _ = images.shape
    g = h // patch_size
    tiled = images.reshape(f, c, g, patch_size, g, patch_size)
    return np.ascontiguousarray(tiled.transpose(0, 2, 4, 1, 3, 5)).reshape(f, g * g, -1)


INIT_STD = 0.02  # stands in for pretrained backbone weights


class VitBackbone(Module):
    """Patch embedding, learned position embedding, pre-norm encoder stack."""

    def __init__(self, cfg: VitConfig, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.embed = Linear(cfg.patch_dim, cfg.embed_dim, rng, dtype, std=INIT_STD)
        self.pos = Tensor(trunc_normal(rng, (cfg.tokens, cfg.embed_dim), std=INIT_STD, dtype=dtype),
                          requires_grad=True)
        self.encoder = Encoder(cfg.embed_dim, cfg.heads, 4 * cfg.embed_dim, cfg.depth, rng,
                               dtype, std=INIT_STD)
        self.dtype = dtype

    def forward_frames(self, images: np.ndarray, collect_attn: bool = False):
        """Encode [F,C,H,W] frames to feature grids [F,D,G,G] in one pass."""
        f = images.shape[0]
        cfg = self.cfg
        if images.shape[1:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise ShapeError(
                f"backbone expects frames [F,{cfg.in_channels},{cfg.image_size},{cfg.image_size}],"
                f" got {images.shape}"
            )
        tokens = patchify_frames(images, cfg.patch_size)
        x = add(self.embed(Tensor(tokens, dtype=self.dtype)), self.pos)
        x, attn = self.encoder(x, collect_attn=collect_attn)
        grids = reshape(transpose(x, (0, 2, 1)), (f, cfg.embed_dim, cfg.grid, cfg.grid))
        return (grids, attn) if collect_attn else grids

    def __call__(self, image: np.ndarray) -> Tensor:
        """Encode one [C,H,W] image to a [D,G,G] feature grid."""
        grids = self.forward_frames(image[None])
        return reshape(grids, grids.shape[1:])


def _to_three_channels(frames: np.ndarray) -> np.ndarray:
    if frames.ndim != 4:
        raise ShapeError(f"visual frames must be [F,C,H,W], got {frames.shape}")
    if frames.shape[1] == 1:
        return np.repeat(frames, 3, axis=1)
    return frames


class VisualExtractor(Module):
    """One backbone per visual modality, with disjoint parameters."""

    def __init__(self, cfg: VitConfig, rng: np.random.Generator, dtype=np.float32):
        self.local_rgb = VitBackbone(cfg, rng, dtype)
        self.local_depth = VitBackbone(cfg, rng, dtype)
        self.global_sem = VitBackbone(cfg, rng, dtype)
        self.global_depth = VitBackbone(cfg, rng, dtype)

    def encode_frames(self, frames_by_modality: dict, collect_attn: bool = False) -> dict:
        """Map modality name -> [F,C,H,W] array to modality name -> [F,D,G,G] Tensor."""
        out = {}
        attn = {}
        for name in VISUAL_MODALITIES:
            frames = frames_by_modality.get(name)
            if frames is None:
                raise DataError(f"missing visual modality: {name}")
            backbone: VitBackbone = getattr(self, name)
            result = backbone.forward_frames(_to_three_channels(frames), collect_attn=collect_attn)
            if collect_attn:
                out[name], attn[name] = result
            else:
                out[name] = result
        return (out, attn) if collect_attn else out
