"""
Hypercolumn Service - hypercolumn construction from backbone stages and
cosine-similarity correspondence matching between feature maps.
Used by: stage2 teacher, matching evaluation, match-viz command
"""

import logging
import math
from typing import Callable, List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from landmark_forge.schemas.features import FeatureMap, HypercolumnMap, SimilarityDistribution
from landmark_forge.schemas.sample import ImageSample, LandmarkSet
from landmark_forge.services.errors import DatasetError, EncoderError

logger = logging.getLogger(__name__)

Extractor = Callable[[Sequence[ImageSample]], FeatureMap]


def build_hypercolumn(stage_maps: List[FeatureMap], target_downscale: int = 4) -> HypercolumnMap:
    """
    Upsample every stage map bilinearly to H/R x W/R and concatenate the
    channels in stage order.
    """
    if not stage_maps:
        raise EncoderError("build_hypercolumn needs at least one stage map")
    source_size = stage_maps[0].source_size
    for fm in stage_maps[1:]:
        if tuple(fm.source_size) != tuple(source_size):
            raise EncoderError(f"stage maps come from different sources: {fm.source_size} vs {source_size}")
    if target_downscale > min(fm.downscale for fm in stage_maps):
        raise EncoderError(f"target downscale {target_downscale} is coarser than the finest stage map")
    size = (source_size[0] // target_downscale, source_size[1] // target_downscale)
    columns, slices, start = [], [], 0
    for fm in stage_maps:
        grid = fm.grid
        if fm.spatial != size:
            grid = F.interpolate(grid, size=size, mode="bilinear", align_corners=False)
        columns.append(grid)
        slices.append((start, start + fm.channels))
        start += fm.channels
    return HypercolumnMap(
        grid=torch.cat(columns, dim=1), downscale=target_downscale, source_size=tuple(source_size), channel_slices=slices
    )


def cosine_map(ref: FeatureMap, ref_uv: Tuple[int, int], query: FeatureMap) -> torch.Tensor:
    """(h, w) cosine similarities of ref[ref_uv] against every query position; zero norms give 0."""
    if ref.channels != query.channels:
        raise EncoderError(f"channel mismatch: ref {ref.channels} vs query {query.channels}")
    row, col = ref_uv
    h, w = ref.spatial
    if not (0 <= row < h and 0 <= col < w):
        raise ValueError(f"ref_uv {ref_uv} outside the {h}x{w} grid")
    source = ref.grid[0, :, row, col]
    target = query.grid[0]
    dots = torch.einsum("c,chw->hw", source, target)
    norms = source.norm() * target.norm(dim=0)
    if bool((norms == 0).any()):
        logger.warning("zero-norm feature vector while matching %s; treated as cosine 0", ref_uv)
    return torch.where(norms > 0, dots / norms.clamp_min(torch.finfo(dots.dtype).tiny), torch.zeros_like(dots))


def cell_center(cell: Tuple[int, int], downscale: int) -> Tuple[float, float]:
    """Pixel (x, y) of a grid cell's center."""
    row, col = cell
    return ((col + 0.5) * downscale, (row + 0.5) * downscale)


def match_point(
    ref: FeatureMap, ref_uv: Tuple[int, int], query: FeatureMap, tau: float = 1.0
) -> Tuple[SimilarityDistribution, Tuple[float, float]]:
    """
    Softmax over query positions of cos(ref[ref_uv], query[k, l]) / tau.

    Returns the heatmap and its argmax in query pixel coordinates (x, y).
    """
    cosines = cosine_map(ref, ref_uv, query)
    h, w = cosines.shape
    mass = torch.softmax(cosines.reshape(-1) / tau, dim=0).reshape(h, w)
    flat = int(torch.argmax(cosines.reshape(-1)))
    cell = (flat // w, flat % w)
    return SimilarityDistribution(mass=mass, source_uv=tuple(ref_uv), temperature=tau), cell_center(cell, query.downscale)


def argmax_cell(distribution: SimilarityDistribution) -> Tuple[int, int]:
    w = distribution.mass.shape[1]
    flat = int(torch.argmax(distribution.mass.reshape(-1)))
    return flat // w, flat % w


def brute_force_match(ref: FeatureMap, ref_uv: Tuple[int, int], query: FeatureMap) -> Tuple[int, int]:
    """Exhaustive nearest-cosine search; first maximum wins, row-major."""
    source = ref.grid[0, :, ref_uv[0], ref_uv[1]].detach().double().numpy()
    target = query.grid[0].detach().double().numpy()
    best, best_cell = -math.inf, (0, 0)
    for row in range(target.shape[1]):
        for col in range(target.shape[2]):
            vector = target[:, row, col]
            norm = np.linalg.norm(source) * np.linalg.norm(vector)
            cosine = float(np.dot(source, vector) / norm) if norm > 0 else 0.0
            if cosine > best:
                best, best_cell = cosine, (row, col)
    return best_cell


def landmark_cell(point: Sequence[float], downscale: int, grid_hw: Tuple[int, int]) -> Tuple[int, int]:
    """floor(p / R), clamped to the grid."""
    h, w = grid_hw
    col = min(max(int(math.floor(point[0] / downscale)), 0), w - 1)
    row = min(max(int(math.floor(point[1] / downscale)), 0), h - 1)
    return row, col


def match_landmarks(
    ref_sample: ImageSample, query_sample: ImageSample, extractor: Extractor, tau: float = 1.0
) -> LandmarkSet:
    """Match every reference landmark's descriptor into the query; predictions in query pixels."""
    if ref_sample.landmarks is None:
        raise DatasetError(f"reference {ref_sample.source_path or '<memory>'} has no landmarks")
    features = extractor([ref_sample, query_sample])
    return match_landmarks_from_maps(ref_sample.landmarks, features.select(0), features.select(1), tau)


def match_landmarks_from_maps(
    ref_landmarks: LandmarkSet, ref: FeatureMap, query: FeatureMap, tau: float = 1.0
) -> LandmarkSet:
    points = []
    for point in ref_landmarks.points:
        cell = landmark_cell(point, ref.downscale, ref.spatial)
        _, xy = match_point(ref, cell, query, tau)
        points.append(xy)
    return LandmarkSet(
        points=np.asarray(points, dtype=np.float64),
        visible=ref_landmarks.visible.copy(),
        eye_indices=ref_landmarks.eye_indices,
    )
