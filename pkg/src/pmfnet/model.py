"""End-to-end crossing-intention model.

Per frame, the four visual modalities are encoded by separate backbones and
collapsed by two depth-guided attention blocks (pedestrian pair, scene pair)
into per-frame local and global feature vectors. The motion encoder turns
pose/box/speed into per-frame motion features of the same width. Modality
attention fuses the (up to) three streams per frame, temporal attention
encodes the fused sequence, and the last frame's encoding is mapped to a
crossing probability.

Variants rewire the forward pass without changing parameter shapes:

    full  all branches, attention everywhere
    V3    visual branches only (motion stream dropped)
    V4    motion branch only (visual streams dropped)
    V5    depth maps replaced by the guided stream itself (self-guided)
    V6    depth-guided attention replaced by downsample-and-add
    V7    modality attention replaced by a uniform mean
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dga import DepthGuidedAttention
from .errors import ConfigError, DataError
from .fusion import MODALITY_ORDER, Diagnostics, ModalityFusion, PredictHead, TemporalEncoder
from .mfe import MfeConfig, MotionEncoder, MotionSequence
from .nn import Module
from .tensor import concat, reshape, take_index
from .data import Sample
from .vit import VisualExtractor, VitConfig

VARIANTS = ("full", "V3", "V4", "V5", "V6", "V7")


@dataclass
class ModelConfig:
    vit: VitConfig = field(default_factory=VitConfig)
    feature_dim: int = 256
    mfe_layers: int = 2
    mfe_heads: int = 4
    taf_layers: int = 2
    taf_heads: int = 4
    dropout: float = 0.2
    dtype: str = "f32"

    def validate(self):
        self.vit.validate()
        if self.feature_dim % self.taf_heads != 0:
            raise ConfigError(
                f"feature_dim {self.feature_dim} not divisible by taf_heads {self.taf_heads}"
            )
        if self.feature_dim % self.mfe_heads != 0:
            raise ConfigError(
                f"feature_dim {self.feature_dim} not divisible by mfe_heads {self.mfe_heads}"
            )
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be f32 or f64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def mfe(self) -> MfeConfig:
        return MfeConfig(embed_dim=self.feature_dim, layers=self.mfe_layers, heads=self.mfe_heads)


def tiny_config(dtype: str = "f64") -> ModelConfig:
    """Smallest full-featured configuration, used for gradient verification."""
    return ModelConfig(
        vit=VitConfig(image_size=16, patch_size=8, embed_dim=4, depth=1, heads=2),
        feature_dim=8,
        mfe_layers=1,
        mfe_heads=2,
        taf_layers=1,
        taf_heads=2,
        dtype=dtype,
    )


class PMFNet(Module):
    """All trainable modules plus the variant-aware forward pass."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, variant: str = "full"):
        cfg.validate()
        if variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
        rng = np.random.default_rng(seed)
        dtype = cfg.np_dtype
        self.vfe = VisualExtractor(cfg.vit, rng, dtype)
        self.dga_local = DepthGuidedAttention(cfg.vit.embed_dim, cfg.feature_dim, rng, dtype)
        self.dga_global = DepthGuidedAttention(cfg.vit.embed_dim, cfg.feature_dim, rng, dtype)
        self.mfe = MotionEncoder(cfg.mfe(), rng, dtype)
        self.maf = ModalityFusion(cfg.feature_dim, rng, dtype)
        self.taf = TemporalEncoder(cfg.feature_dim, cfg.taf_heads, cfg.taf_layers, rng, dtype)
        self.head = PredictHead(cfg.feature_dim, rng, dtype, dropout=cfg.dropout)
        self.cfg = cfg
        self.variant = variant

    @property
    def uses_motion(self) -> bool:
        return self.variant != "V3"

    @property
    def uses_visual(self) -> bool:
        return self.variant != "V4"

    def _require(self, sample: Sample, names):
        for name in names:
            if getattr(sample, name) is None:
                raise DataError(f"sample {sample.id}: variant {self.variant} needs modality {name}")

    def _visual_frames(self, samples, name) -> np.ndarray:
        """Stack one visual modality over the batch: [B*N, C, H, W]."""
        arr = np.stack([getattr(s, name) for s in samples])
        b, n = arr.shape[:2]
        arr = arr.reshape((b * n,) + arr.shape[2:]).astype(self.cfg.np_dtype, copy=False)
        if arr.shape[1] == 1:
            arr = np.repeat(arr, 3, axis=1)
        return arr

    def forward_batch(self, samples, train: bool = False,
                      rng: np.random.Generator | None = None,
                      collect_internal: dict | None = None):
        """Run a batch of same-length samples through the network.

        Returns (probabilities Tensor [B], list of per-sample Diagnostics).
        ``collect_internal``, when given, receives the raw channel/spatial
        attention values of both depth-guided blocks.
        """
        b = len(samples)
        n = samples[0].frames
        for s in samples:
            if s.frames != n:
                raise DataError(f"batch mixes sequence lengths {n} and {s.frames}")
        d = self.cfg.feature_dim
        dga_mode = "addition" if self.variant == "V6" else "attention"
        maf_mode = "addition" if self.variant == "V7" else "attention"

        streams = []  # (modality name, [B, N, d] Tensor)
        if self.uses_motion:
            for s in samples:
                self._require(s, ("pose", "bbox", "speed"))
            seqs = [MotionSequence(pose=s.pose, bbox=s.bbox, speed=s.speed) for s in samples]
            streams.append(("motion", self.mfe.encode_batch(seqs)))
        if self.uses_visual:
            if self.variant == "V5":
                # depth removed: each guided stream doubles as its own guide
                for s in samples:
                    self._require(s, ("local_rgb", "global_sem"))
                rgb_maps = self.vfe.local_rgb.forward_frames(self._visual_frames(samples, "local_rgb"))
                sem_maps = self.vfe.global_sem.forward_frames(self._visual_frames(samples, "global_sem"))
                local_pair = (rgb_maps, rgb_maps)
                global_pair = (sem_maps, sem_maps)
            else:
                for s in samples:
                    self._require(s, ("local_rgb", "local_depth", "global_sem", "global_depth"))
                rgb_maps = self.vfe.local_rgb.forward_frames(self._visual_frames(samples, "local_rgb"))
                ld_maps = self.vfe.local_depth.forward_frames(self._visual_frames(samples, "local_depth"))
                sem_maps = self.vfe.global_sem.forward_frames(self._visual_frames(samples, "global_sem"))
                gd_maps = self.vfe.global_depth.forward_frames(self._visual_frames(samples, "global_depth"))
                local_pair = (rgb_maps, ld_maps)
                global_pair = (sem_maps, gd_maps)
            local = self.dga_local.fuse(*local_pair, mode=dga_mode, collect=collect_internal)
            global_ = self.dga_global.fuse(*global_pair, mode=dga_mode, collect=collect_internal)
            streams.append(("local", reshape(local, (b, n, d))))
            streams.append(("global", reshape(global_, (b, n, d))))

        order = [name for name in MODALITY_ORDER if name in {s[0] for s in streams}]
        by_name = dict(streams)
        stacked = concat([reshape(by_name[name], (b, n, 1, d)) for name in order], axis=2)
        fused, alpha = self.maf.fuse(stacked, mode=maf_mode)
        encoded, temporal = self.taf(fused)  # [B,N,d], [B,L,H,N,N]
        p = self.head(take_index(encoded, n - 1, axis=1), train=train, rng=rng)

        diags = []
        for i in range(b):
            weights = np.zeros((n, len(MODALITY_ORDER)), dtype=np.float64)
            for col, name in enumerate(MODALITY_ORDER):
                if name in order:
                    weights[:, col] = alpha.data[i, :, order.index(name)]
            diags.append(Diagnostics(modality_weights=weights, temporal_attention=temporal[i]))
        return p, diags

    def forward(self, sample: Sample, train: bool = False,
                rng: np.random.Generator | None = None,
                collect_internal: dict | None = None):
        """Single-sample forward: (scalar probability Tensor, Diagnostics)."""
        p, diags = self.forward_batch([sample], train=train, rng=rng,
                                      collect_internal=collect_internal)
        return reshape(p, ()), diags[0]
