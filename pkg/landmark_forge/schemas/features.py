"""Tensor-carrying feature records. Grids are channel-first: (N, C, h, w)."""

from dataclasses import dataclass, field
from typing import List, Tuple

import torch


@dataclass
class FeatureMap:
    grid: torch.Tensor
    downscale: int
    source_size: Tuple[int, int]

    @property
    def channels(self) -> int:
        return self.grid.shape[1]

    @property
    def spatial(self) -> Tuple[int, int]:
        return tuple(self.grid.shape[-2:])

    def select(self, index: int) -> "FeatureMap":
        return FeatureMap(self.grid[index:index + 1], self.downscale, self.source_size)


@dataclass
class HypercolumnMap(FeatureMap):
    channel_slices: List[Tuple[int, int]] = field(default_factory=list)

    def select(self, index: int) -> "HypercolumnMap":
        return HypercolumnMap(self.grid[index:index + 1], self.downscale, self.source_size, self.channel_slices)


@dataclass
class SimilarityDistribution:
    mass: torch.Tensor          # (h, w), sums to 1
    source_uv: Tuple[int, int]  # (row, col) in the source grid
    temperature: float

    def entropy(self) -> float:
        p = self.mass.clamp_min(1e-30)
        return float(-(self.mass * p.log()).sum())
