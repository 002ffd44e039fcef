"""On-disk tensor format, sample loading, and the synthetic dataset generator.

Tensor container (.pmft), little-endian throughout:

    bytes 0..3   magic "PMFT"
    byte  4      version, 0x01
    byte  5      dtype, 0x01 = float32, 0x02 = float64
    byte  6      ndim
    next 4*ndim  dims as unsigned 32-bit integers
    rest         row-major payload

A sample is a directory holding ``meta.txt`` ("key: value" per line with
keys id, label, n, N, H, W) plus one .pmft file per modality: pose [N,36],
bbox [N,4], speed [N,1], local_rgb [N,3,H,W], local_depth [N,1,H,W],
global_sem [N,3,H,W], global_depth [N,1,H,W]. Image values live in [0,1].

Synthetic data plants a deterministic crossing rule. Label-1 samples have a
bounding-box height that grows monotonically by at least 30% over the
window, a monotonically decreasing ego speed, and a mean pedestrian-crop
depth that falls by at least 0.2; label-0 samples violate all three (height
shrinks, speed rises, depth rises). Pose follows a small random walk around
the box center. Images are smooth random cosine fields: the depth crops
carry the per-frame depth level, the pedestrian crop contains a centered
blob whose extent follows the size signal, and the scene semantic map is a
static context field. Gaussian noise of the configured sigma is added to
every channel afterwards (box noise perturbs center and height so corner
ordering survives), and image channels are clipped back to [0,1]. With
sigma 0 the rule classifier in :func:`planted_rule` is exact on the output.

The ``signal`` switch restricts the planted rule to one branch: with
"motion_only" the image channels are label-independent, with "visual_only"
the pose/box/speed channels are label-independent. The full rule holds only
for the default "both".
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    PmftDtypeError,
    PmftMagicError,
    PmftTruncatedError,
    PmftVersionError,
)

MAGIC = b"PMFT"
VERSION = 1
_DTYPE_TO_CODE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}

MODALITY_NAMES = (
    "pose", "bbox", "speed", "local_rgb", "local_depth", "global_sem", "global_depth",
)
META_NAME = "meta.txt"


def write_pmft(array: np.ndarray, path) -> None:
    """Serialize a float32/float64 array; bit-exact under :func:`read_pmft`."""
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _DTYPE_TO_CODE:
        raise PmftDtypeError(f"dtype must be float32 or float64, got {arr.dtype}")
    if arr.ndim < 1 or arr.ndim > 255:
        raise DataError(f"ndim must be in 1..255, got {arr.ndim}")
    if any(d <= 0 for d in arr.shape):
        raise DataError(f"dims must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("refusing to serialize non-finite values")
    header = MAGIC + bytes([VERSION, _DTYPE_TO_CODE[arr.dtype], arr.ndim])
    header += b"".join(struct.pack("<I", d) for d in arr.shape)
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_pmft(path) -> np.ndarray:
    """Deserialize a .pmft file, validating every header field."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise PmftTruncatedError(f"{path}: file ends inside the magic bytes")
    if raw[:4] != MAGIC:
        raise PmftMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 7:
        raise PmftTruncatedError(f"{path}: file ends inside the fixed header")
    version, dtype_code, ndim = raw[4], raw[5], raw[6]
    if version != VERSION:
        raise PmftVersionError(f"{path}: unsupported version {version}, expected {VERSION}")
    if dtype_code not in _CODE_TO_DTYPE:
        raise PmftDtypeError(f"{path}: unknown dtype code {dtype_code}")
    if ndim < 1:
        raise DataError(f"{path}: ndim must be at least 1")
    dims_end = 7 + 4 * ndim
    if len(raw) < dims_end:
        raise PmftTruncatedError(f"{path}: file ends inside the dims block")
    dims = struct.unpack(f"<{ndim}I", raw[7:dims_end])
    if any(d == 0 for d in dims):
        raise DataError(f"{path}: dims must be positive, got {dims}")
    dtype = _CODE_TO_DTYPE[dtype_code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - dims_end != expected:
        raise PmftTruncatedError(
            f"{path}: payload has {len(raw) - dims_end} bytes, expected {expected}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=dims_end)
    return np.ascontiguousarray(data.reshape(dims)).astype(dtype.newbyteorder("="), copy=False)


@dataclass
class Sample:
    """One observation window: seven modality tensors plus label metadata."""

    id: str
    label: int
    horizon: int
    pose: np.ndarray | None = None          # [N, 36]
    bbox: np.ndarray | None = None          # [N, 4]
    speed: np.ndarray | None = None         # [N, 1]
    local_rgb: np.ndarray | None = None     # [N, 3, H, W]
    local_depth: np.ndarray | None = None   # [N, 1, H, W]
    global_sem: np.ndarray | None = None    # [N, 3, H, W]
    global_depth: np.ndarray | None = None  # [N, 1, H, W]

    @property
    def frames(self) -> int:
        for name in MODALITY_NAMES:
            value = getattr(self, name)
            if value is not None:
                return value.shape[0]
        raise DataError(f"sample {self.id}: no modality tensors present")

    def validate(self):
        if self.label not in (0, 1):
            raise DataError(f"sample {self.id}: label must be 0 or 1, got {self.label}")
        n = self.frames
        widths = {"pose": 36, "bbox": 4, "speed": 1}
        for name, width in widths.items():
            value = getattr(self, name)
            if value is not None and value.shape != (n, width):
                raise DataError(
                    f"sample {self.id}: {name} must be [{n},{width}], got {value.shape}"
                )
        hw = None
        channels = {"local_rgb": 3, "local_depth": 1, "global_sem": 3, "global_depth": 1}
        for name, c in channels.items():
            value = getattr(self, name)
            if value is None:
                continue
            if value.ndim != 4 or value.shape[0] != n or value.shape[1] != c:
                raise DataError(
                    f"sample {self.id}: {name} must be [{n},{c},H,W], got {value.shape}"
                )
            if hw is None:
                hw = value.shape[2:]
            elif value.shape[2:] != hw:
                raise DataError(
                    f"sample {self.id}: {name} spatial size {value.shape[2:]} != {hw}"
                )
            if value.min() < 0.0 or value.max() > 1.0:
                raise DataError(f"sample {self.id}: {name} values must lie in [0,1]")
        if self.bbox is not None:
            if np.any(self.bbox[:, 0] > self.bbox[:, 2]) or np.any(self.bbox[:, 1] > self.bbox[:, 3]):
                raise DataError(f"sample {self.id}: bbox corners out of order")


def write_sample(sample: Sample, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = sample.frames
    h, w = sample.local_rgb.shape[2:]
    meta = (
        f"id: {sample.id}\nlabel: {sample.label}\nn: {sample.horizon}\n"
        f"N: {n}\nH: {h}\nW: {w}\n"
    )
    (directory / META_NAME).write_text(meta, encoding="utf-8")
    for name in MODALITY_NAMES:
        write_pmft(getattr(sample, name).astype(np.float32), directory / f"{name}.pmft")


def _parse_meta(path: Path) -> dict:
    if not path.is_file():
        raise DataError(f"missing meta file {path}")
    meta = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise DataError(f"{path}:{line_no}: expected 'key: value', got {line!r}")
        key, value = line.split(":", 1)
        meta[key.strip()] = value.strip()
    for key in ("id", "label", "n", "N", "H", "W"):
        if key not in meta:
            raise DataError(f"{path}: missing meta key {key!r}")
    return meta


def load_sample(directory) -> Sample:
    """Load and validate one sample directory."""
    directory = Path(directory)
    meta = _parse_meta(directory / META_NAME)
    try:
        label = int(meta["label"])
        horizon = int(meta["n"])
        n, h, w = int(meta["N"]), int(meta["H"]), int(meta["W"])
    except ValueError as exc:
        raise DataError(f"{directory}: non-integer meta value ({exc})") from None
    sample = Sample(id=meta["id"], label=label, horizon=horizon)
    expected = {
        "pose": (n, 36),
        "bbox": (n, 4),
        "speed": (n, 1),
        "local_rgb": (n, 3, h, w),
        "local_depth": (n, 1, h, w),
        "global_sem": (n, 3, h, w),
        "global_depth": (n, 1, h, w),
    }
    for name, shape in expected.items():
        path = directory / f"{name}.pmft"
        if not path.is_file():
            raise DataError(f"sample {sample.id}: missing modality file {name}.pmft")
        array = read_pmft(path)
        if array.shape != shape:
            raise DataError(
                f"sample {sample.id}: {name} has shape {array.shape}, meta implies {shape}"
            )
        setattr(sample, name, array)
    sample.validate()
    return sample


def load_dataset(directory) -> list[Sample]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    sample_dirs = sorted(p for p in directory.iterdir() if p.is_dir())
    if not sample_dirs:
        raise DataError(f"dataset directory {directory} holds no sample directories")
    return [load_sample(p) for p in sample_dirs]


# -- synthetic generation -------------------------------------------------------

SIGNAL_MODES = ("both", "motion_only", "visual_only")


@dataclass
class SynthConfig:
    n_samples: int = 512
    frames: int = 16
    image_size: int = 32
    noise_std: float = 0.1
    class_balance: float = 0.5
    seed: int = 0
    signal: str = "both"

    def validate(self):
        if self.n_samples <= 0:
            raise DataError("n_samples must be positive")
        if self.frames < 2:
            raise DataError("frames must be at least 2")
        if self.image_size < 4:
            raise DataError("image_size must be at least 4")
        if self.noise_std < 0:
            raise DataError("noise_std must be non-negative")
        if not 0.0 <= self.class_balance <= 1.0:
            raise DataError("class_balance must lie in [0,1]")
        if self.signal not in SIGNAL_MODES:
            raise DataError(f"signal must be one of {SIGNAL_MODES}, got {self.signal!r}")


def planted_rule(sample: Sample) -> int:
    """Bayes-optimal classifier for noiseless synthetic samples."""
    heights = sample.bbox[:, 3] - sample.bbox[:, 1]
    grows = bool(np.all(np.diff(heights) >= -1e-9) and heights[-1] >= 1.3 * heights[0] - 1e-9)
    slows = bool(np.all(np.diff(sample.speed[:, 0]) <= 1e-9))
    depth_means = sample.local_depth.reshape(sample.local_depth.shape[0], -1).mean(axis=1)
    closer = bool(depth_means[0] - depth_means[-1] >= 0.2 - 1e-9)
    return int(grows and slows and closer)


def _cosine_field(rng: np.random.Generator, size: int, amp: float) -> np.ndarray:
    """Smooth zero-mean field, max magnitude ``amp``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    field = np.zeros((size, size))
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * (fx * xx + fy * yy) + phase)
    field -= field.mean()
    peak = np.max(np.abs(field))
    if peak > 0:
        field *= amp / peak
    return field


def _blob(size: int, sigma_px: float, cx: float, cy: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma_px**2)))


def _make_sample(rng: np.random.Generator, sample_id: str, label: int,
                 cfg: SynthConfig) -> Sample:
    n, size, sigma = cfg.frames, cfg.image_size, cfg.noise_std
    t = np.linspace(0.0, 1.0, n)
    motion_signal = cfg.signal in ("both", "motion_only")
    visual_signal = cfg.signal in ("both", "visual_only")

    # box height and ego speed trajectories
    if motion_signal:
        if label == 1:
            h0 = rng.uniform(0.08, 0.15)
            heights = h0 * (1.0 + rng.uniform(0.4, 0.7) * t)
            speed = rng.uniform(0.6, 0.9) - rng.uniform(0.25, 0.45) * t
        else:
            h0 = rng.uniform(0.1, 0.18)
            heights = h0 * (1.0 - rng.uniform(0.15, 0.35) * t)
            speed = rng.uniform(0.3, 0.6) + rng.uniform(0.25, 0.45) * t
    else:
        h0 = rng.uniform(0.1, 0.16)
        heights = h0 * (1.0 + 0.05 * np.sin(2 * np.pi * t))
        speed = rng.uniform(0.4, 0.8) + 0.05 * np.sin(2 * np.pi * t + rng.uniform(0, np.pi))

    cx = rng.uniform(0.35, 0.65)
    cy = rng.uniform(0.4, 0.6)

    # pedestrian-crop depth level, scene depth level, blob extent
    if visual_signal:
        if label == 1:
            depth_level = rng.uniform(0.65, 0.8) - rng.uniform(0.25, 0.35) * t
            scene_depth = rng.uniform(0.6, 0.75) - rng.uniform(0.2, 0.3) * t
            blob_size = rng.uniform(0.1, 0.16) * (1.0 + rng.uniform(0.4, 0.7) * t)
        else:
            depth_level = rng.uniform(0.3, 0.45) + rng.uniform(0.1, 0.25) * t
            scene_depth = rng.uniform(0.35, 0.5) + rng.uniform(0.1, 0.2) * t
            blob_size = rng.uniform(0.12, 0.2) * (1.0 - rng.uniform(0.15, 0.35) * t)
    else:
        depth_level = np.full(n, rng.uniform(0.4, 0.6))
        scene_depth = np.full(n, rng.uniform(0.4, 0.6))
        blob_size = np.full(n, rng.uniform(0.1, 0.18))

    # motion tensors: noise perturbs center/height so corner order survives
    cxs = cx + rng.normal(0, sigma, n)
    cys = cy + rng.normal(0, sigma, n)
    hs = np.maximum(heights + rng.normal(0, sigma, n), 0.02)
    ws = 0.4 * hs
    bbox = np.stack([
        np.clip(cxs - ws / 2, 0, 1),
        np.clip(cys - hs / 2, 0, 1),
        np.clip(cxs + ws / 2, 0, 1),
        np.clip(cys + hs / 2, 0, 1),
    ], axis=1)

    joints = np.stack([cx, cy] * 18) + rng.uniform(-0.05, 0.05, 36)
    walk = np.cumsum(rng.normal(0, 0.005, (n, 36)), axis=0)
    pose = np.clip(joints[None, :] + walk + rng.normal(0, sigma, (n, 36)), 0, 1)

    speed_col = (speed + rng.normal(0, sigma, n))[:, None]

    # image tensors
    field_ld = _cosine_field(rng, size, 0.06)
    field_gd = _cosine_field(rng, size, 0.06)
    fields_rgb = np.stack([_cosine_field(rng, size, 0.08) for _ in range(3)])
    fields_sem = np.stack([_cosine_field(rng, size, 0.1) for _ in range(3)])
    blob_cx = size / 2 + rng.uniform(-2, 2)
    blob_cy = size / 2 + rng.uniform(-2, 2)

    local_depth = depth_level[:, None, None, None] + field_ld[None, None, :, :]
    global_depth = scene_depth[:, None, None, None] + field_gd[None, None, :, :]
    blobs = np.stack([_blob(size, max(bs * size, 1.0), blob_cx, blob_cy) for bs in blob_size])
    local_rgb = 0.45 + fields_rgb[None, :, :, :] + 0.3 * blobs[:, None, :, :]
    global_sem = np.broadcast_to(0.5 + fields_sem[None, :, :, :], (n, 3, size, size)).copy()

    def finish(img):
        img = np.clip(img, 0.02, 0.98)
        img = img + rng.normal(0, sigma, img.shape)
        return np.clip(img, 0.0, 1.0).astype(np.float32)

    return Sample(
        id=sample_id,
        label=label,
        horizon=int(rng.choice([30, 60])),
        pose=pose.astype(np.float32),
        bbox=bbox.astype(np.float32),
        speed=speed_col.astype(np.float32),
        local_rgb=finish(local_rgb),
        local_depth=finish(local_depth),
        global_sem=finish(global_sem),
        global_depth=finish(global_depth),
    )


def synth_generate(cfg: SynthConfig, out_dir) -> list[Path]:
    """Generate one dataset split on disk; deterministic per seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n_pos = round(cfg.n_samples * cfg.class_balance)
    labels = np.array([1] * n_pos + [0] * (cfg.n_samples - n_pos))
    labels = labels[rng.permutation(cfg.n_samples)]
    out_dir = Path(out_dir)
    written = []
    for k, label in enumerate(labels):
        sample = _make_sample(rng, f"sample_{k:05d}", int(label), cfg)
        path = out_dir / sample.id
        write_sample(sample, path)
        written.append(path)
    return written


def random_sample(rng: np.random.Generator, frames: int = 4, image_size: int = 16,
                  label: int = 1) -> Sample:
    """Small fully-random sample for tests and gradient checks."""
    def img(c):
        return rng.random((frames, c, image_size, image_size)).astype(np.float32)

    x1 = rng.uniform(0.1, 0.4, (frames, 1))
    y1 = rng.uniform(0.1, 0.4, (frames, 1))
    return Sample(
        id="random",
        label=label,
        horizon=30,
        pose=rng.random((frames, 36)).astype(np.float32),
        bbox=np.concatenate(
            [x1, y1, x1 + rng.uniform(0.05, 0.3, (frames, 1)),
             y1 + rng.uniform(0.05, 0.3, (frames, 1))], axis=1
        ).astype(np.float32),
        speed=rng.random((frames, 1)).astype(np.float32),
        local_rgb=img(3),
        local_depth=img(1),
        global_sem=img(3),
        global_depth=img(1),
    )
