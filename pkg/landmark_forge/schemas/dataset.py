from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from landmark_forge.schemas.encoder import STAGE_DOWNSCALES


# Channel statistics of the synthetic dataset (computed once over 2000 renders).
SYNTHETIC_MEAN = (0.5418, 0.4721, 0.4410)
SYNTHETIC_STD = (0.2371, 0.2290, 0.2335)


class AugmentationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    crop_size: int = 96
    resize_size: int = 136
    crop_scale_range: Tuple[float, float] = (0.5, 1.0)
    flip_prob: float = 0.5
    color_jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.2
    hue: float = 0.1
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    solarize_prob_target_only: float = 0.2
    unaligned_margin: Tuple[float, float] = (0.10, 0.20)
    mean: Tuple[float, float, float] = SYNTHETIC_MEAN
    std: Tuple[float, float, float] = SYNTHETIC_STD
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self):
        for name in ("flip_prob", "color_jitter_prob", "grayscale_prob", "blur_prob", "solarize_prob_target_only"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.crop_size > self.resize_size:
            raise ValueError(f"crop_size {self.crop_size} exceeds resize_size {self.resize_size}")
        if self.crop_size % STAGE_DOWNSCALES[-1]:
            raise ValueError(f"crop_size {self.crop_size} must be a multiple of {STAGE_DOWNSCALES[-1]}")
        low, high = self.crop_scale_range
        if not 0.0 < low <= high <= 1.0:
            raise ValueError(f"crop_scale_range must satisfy 0 < min <= max <= 1, got {self.crop_scale_range}")
        return self

    @classmethod
    def identity(cls, **overrides) -> "AugmentationConfig":
        """No photometric or geometric randomness: both views equal the resized image."""
        values = dict(
            crop_scale_range=(1.0, 1.0), flip_prob=0.0, color_jitter_prob=0.0,
            grayscale_prob=0.0, blur_prob=0.0, solarize_prob_target_only=0.0,
        )
        values.update(overrides)
        return cls(**values)


class DatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    root: Optional[str] = None              # absent -> synthetic in-memory set
    annotations: Optional[str] = None       # defaults to <root>/landmarks.csv when present
    eye_indices: Tuple[int, int] = (0, 1)
    synthetic_count: int = 200
    synthetic_identities: int = 50
    canvas: int = 96
    val_fraction: float = Field(default=0.25, ge=0.0, lt=1.0)
    n_same_pairs: int = 500
    n_diff_pairs: int = 500
