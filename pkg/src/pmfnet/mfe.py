"""Motion feature extraction.

Pose keypoints, bounding boxes, and ego-vehicle speed are stacked per frame
into a 41-wide vector ([pose 36, bbox 4, speed 1]), embedded, tagged with a
sinusoidal position code, and encoded by a bidirectional transformer stack.
No causal mask is applied: the whole observation window is visible to every
frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .nn import Encoder, Linear, Module, sinusoidal_encoding
from .tensor import Tensor, add

POSE_WIDTH = 36   # 18 joints, 2 coordinates each
BBOX_WIDTH = 4    # x1, y1, x2, y2
SPEED_WIDTH = 1
MOTION_WIDTH = POSE_WIDTH + BBOX_WIDTH + SPEED_WIDTH


@dataclass
class MotionSequence:
    """Per-frame motion observations, all sharing the sequence length."""

    pose: np.ndarray   # [N, 36] normalized image coordinates, missing joints 0
    bbox: np.ndarray   # [N, 4] normalized (x1, y1, x2, y2)
    speed: np.ndarray  # [N, 1] ego speed, any real scalar

    def validate(self):
        n = self.pose.shape[0]
        if self.pose.ndim != 2 or self.pose.shape[1] != POSE_WIDTH:
            raise DataError(f"pose must be [N,{POSE_WIDTH}], got {self.pose.shape}")
        if self.bbox.shape != (n, BBOX_WIDTH):
            raise DataError(f"bbox must be [{n},{BBOX_WIDTH}], got {self.bbox.shape}")
        if self.speed.shape != (n, SPEED_WIDTH):
            raise DataError(f"speed must be [{n},{SPEED_WIDTH}], got {self.speed.shape}")
        if np.any(self.bbox[:, 0] > self.bbox[:, 2]) or np.any(self.bbox[:, 1] > self.bbox[:, 3]):
            raise DataError("bbox corners must satisfy x1 <= x2 and y1 <= y2")

    @property
    def frames(self) -> int:
        return self.pose.shape[0]


@dataclass
class MfeConfig:
    embed_dim: int = 256
    layers: int = 2
    heads: int = 4

    def validate(self):
        if self.embed_dim % self.heads != 0:
            raise ShapeError(f"embed dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def ffn_dim(self) -> int:
        return 4 * self.embed_dim


def stack_motion_array(seq: MotionSequence) -> np.ndarray:
    """Concatenate [pose, bbox, speed] per frame into an [N, 41] array."""
    seq.validate()
    return np.concatenate([seq.pose, seq.bbox, seq.speed], axis=1)


def stack_motion(seq: MotionSequence, dtype=np.float32) -> Tensor:
    return Tensor(stack_motion_array(seq), dtype=dtype)


class MotionEncoder(Module):
    def __init__(self, cfg: MfeConfig, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.embed = Linear(MOTION_WIDTH, cfg.embed_dim, rng, dtype)
        self.encoder = Encoder(cfg.embed_dim, cfg.heads, cfg.ffn_dim, cfg.layers, rng, dtype)
        self.dtype = dtype

    def __call__(self, seq: MotionSequence, collect_attn: bool = False):
        """Encode a motion sequence to per-frame features [N, embed_dim]."""
        x = self.embed(stack_motion(seq, dtype=self.dtype))
        pe = Tensor(sinusoidal_encoding(seq.frames, self.cfg.embed_dim, dtype=self.dtype))
        x = add(x, pe)
        x, attn = self.encoder(x, collect_attn=collect_attn)
        return (x, attn) if collect_attn else x

    def encode_batch(self, seqs: list[MotionSequence]) -> Tensor:
        """Encode a batch of equal-length sequences to [B, N, embed_dim]."""
        stacked = np.stack([stack_motion_array(seq) for seq in seqs])
        x = self.embed(Tensor(stacked, dtype=self.dtype))
        pe = Tensor(sinusoidal_encoding(stacked.shape[1], self.cfg.embed_dim, dtype=self.dtype))
        x = add(x, pe)
        x, _ = self.encoder(x)
        return x
