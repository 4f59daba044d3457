"""Flat declarative configuration.

Every tunable default lives here: codebook size, learning rates, focal
exponents, class weights, loss weights, the kernel-width rule, NMS/IoU
thresholds, display windowing, epochs, and seeds. Unknown keys are
rejected at load time and every value is validated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

CLASS_NAMES = ("HCC", "ICC", "Benign", "Metastasis")


@dataclass
class Config:
    seed: int = 0

    # detection
    grid_shape: tuple[int, int, int] = (64, 64, 48)   # fixed detection resample grid
    downsample: int = 2                               # heatmap grid factor R
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    lambda_size: float = 0.1
    lambda_off: float = 1.0
    sigma_floor: float = 1.0                          # sigma = max(floor, min(s)/(divisor*R))
    sigma_size_divisor: float = 6.0
    detector_lr: float = 0.015
    detector_epochs: int = 20
    topk: int = 10
    nms_iou: float = 0.45                             # cross-phase candidate merging
    hit_iou: float = 0.3                              # detection "hit" criterion

    # texture classifier
    codebook_size: int = 8                            # K
    descriptor_dim: int = 16
    conv2_stride: int = 2
    encoding_scale: float = 10.0                      # fixed gain after l2 norm
    conv_channels: tuple[int, int] = (8, 16)
    learning_rate: float = 0.004
    gamma_focal: float = 2.0
    class_weights: dict = field(
        default_factory=lambda: {"HCC": 5.0, "ICC": 1.0, "Benign": 1.0, "Metastasis": 2.0})
    epochs: int = 50                                  # joint SGD epochs (all parameters)
    head_epochs: int = 300                            # cached head-only epochs afterwards
    batch_size: int = 16
    canvas_size: int = 64                             # native-resolution crop canvas
    crop_margin: float = 0.25
    delta_source: str = "mask"                        # aggregation gate: "mask" or "box"
    deepten_size: int = 256                           # resized baseline input
    train_slices: int = 5                             # top-area slices per study (train)
    train_augment: bool = True                        # random rot90/flip per step
    primary_threshold: float = 0.5

    # harvesting / review
    window_level: float = 50.0
    window_width: float = 400.0
    montage_cell: int = 64
    harvest_min_score: float = 0.05
    qa_minutes_per_study: float = 1.0
    manual_minutes_per_study: float = 15.0

    def __post_init__(self):
        self.grid_shape = tuple(int(v) for v in self.grid_shape)
        self.conv_channels = tuple(int(v) for v in self.conv_channels)
        validate(self)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def validate(cfg: Config) -> None:
    def positive(name):
        if getattr(cfg, name) <= 0:
            raise ValueError(f"config: {name} must be positive, got {getattr(cfg, name)}")

    for name in ("downsample", "focal_alpha", "focal_beta", "detector_lr",
                 "detector_epochs", "topk", "codebook_size", "descriptor_dim",
                 "learning_rate", "epochs", "batch_size", "canvas_size",
                 "deepten_size", "train_slices", "window_width", "montage_cell",
                 "sigma_floor", "sigma_size_divisor", "qa_minutes_per_study",
                 "manual_minutes_per_study", "encoding_scale", "conv2_stride"):
        positive(name)
    for name in ("lambda_size", "lambda_off", "gamma_focal", "harvest_min_score",
                 "crop_margin", "head_epochs"):
        if getattr(cfg, name) < 0:
            raise ValueError(f"config: {name} must be non-negative")
    for name in ("nms_iou", "hit_iou", "primary_threshold"):
        v = getattr(cfg, name)
        if not 0 < v < 1:
            raise ValueError(f"config: {name} must be in (0,1), got {v}")
    if len(cfg.grid_shape) != 3 or min(cfg.grid_shape) < cfg.downsample:
        raise ValueError(f"config: bad grid_shape {cfg.grid_shape}")
    if any(g % cfg.downsample for g in cfg.grid_shape):
        raise ValueError(
            f"config: grid_shape {cfg.grid_shape} must be divisible by downsample "
            f"{cfg.downsample}")
    if set(cfg.class_weights) != set(CLASS_NAMES):
        raise ValueError(
            f"config: class_weights must name exactly {CLASS_NAMES}, got "
            f"{sorted(cfg.class_weights)}")
    if any(w <= 0 for w in cfg.class_weights.values()):
        raise ValueError("config: class weights must be positive")
    if len(cfg.conv_channels) != 2 or min(cfg.conv_channels) < 1:
        raise ValueError("config: conv_channels must be two positive ints")
    if cfg.delta_source not in ("mask", "box"):
        raise ValueError(f"config: delta_source must be 'mask' or 'box', got "
                         f"{cfg.delta_source!r}")


_FIELD_NAMES = {f.name for f in fields(Config)}


def load_config(path: str | None = None, overrides: dict | None = None) -> Config:
    """Build a Config from defaults, then a JSON file, then overrides.
    Unknown keys are rejected."""
    data: dict = {}
    if path is not None:
        with open(path) as f:
            data.update(json.load(f))
    if overrides:
        data.update(overrides)
    unknown = set(data) - _FIELD_NAMES
    if unknown:
        raise ValueError(f"config: unknown keys {sorted(unknown)}")
    for key in ("grid_shape", "conv_channels"):
        if key in data:
            data[key] = tuple(data[key])
    return Config(**data)
