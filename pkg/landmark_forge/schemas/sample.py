"""Array-carrying domain records: landmarks, image samples, view pairs."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
import torch


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray                      # (K, 2) pixel (x, y)
    visible: np.ndarray                     # (K,) bool
    eye_indices: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        visible = np.asarray(self.visible, dtype=bool).reshape(-1)
        if visible.shape[0] != points.shape[0]:
            raise ValueError(f"visible has {visible.shape[0]} flags for {points.shape[0]} points")
        if self.eye_indices is not None:
            left, right = self.eye_indices
            if points.shape[0] < 2:
                raise ValueError("eye_indices requires at least two landmarks")
            if left == right or not (0 <= left < points.shape[0] and 0 <= right < points.shape[0]):
                raise ValueError(f"eye_indices {self.eye_indices} invalid for K={points.shape[0]}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "visible", visible)

    @classmethod
    def from_points(cls, points, eye_indices: Optional[Tuple[int, int]] = None) -> "LandmarkSet":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return cls(points=points, visible=np.ones(points.shape[0], dtype=bool), eye_indices=eye_indices)

    def __len__(self) -> int:
        return self.points.shape[0]

    def transform(self, affine: np.ndarray) -> "LandmarkSet":
        """Map points through a 3x3 affine acting on homogeneous (x, y, 1)."""
        homogeneous = np.concatenate([self.points, np.ones((len(self), 1))], axis=1)
        mapped = homogeneous @ np.asarray(affine, dtype=np.float64).T
        return replace(self, points=mapped[:, :2])

    def clip_visibility(self, width: int, height: int) -> "LandmarkSet":
        """Flag points that fall outside [0, W) x [0, H) as invisible."""
        x, y = self.points[:, 0], self.points[:, 1]
        inside = (x >= 0) & (x < width) & (y >= 0) & (y < height)
        return replace(self, visible=self.visible & inside)


@dataclass(frozen=True)
class ImageSample:
    image: np.ndarray                       # (H, W, 3) float32 in [0, 1]
    landmarks: Optional[LandmarkSet] = None
    identity_id: int = -1
    source_path: Optional[str] = None

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float32)
        if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] == 0 or image.shape[1] == 0:
            raise ValueError(f"image must be HxWx3 with H, W > 0, got {image.shape}")
        object.__setattr__(self, "image", image)
        if self.landmarks is not None:
            height, width = image.shape[:2]
            object.__setattr__(self, "landmarks", self.landmarks.clip_visibility(width, height))

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def to_tensor(self) -> torch.Tensor:
        """(3, H, W) float tensor."""
        return torch.from_numpy(np.ascontiguousarray(self.image)).permute(2, 0, 1).contiguous()


@dataclass(frozen=True)
class ViewPair:
    query_view: ImageSample
    key_view: ImageSample
    geometry: Optional[np.ndarray] = None   # 3x3, query pixel -> key pixel
    query_affine: Optional[np.ndarray] = field(default=None, repr=False)
    key_affine: Optional[np.ndarray] = field(default=None, repr=False)
