"""
Metrics Service - landmark error metrics: inter-ocular normalized error and
PCK at a fraction of the longer image side.
"""

from typing import Sequence, Tuple, Union

import numpy as np

from landmark_forge.schemas.sample import ImageSample, LandmarkSet
from landmark_forge.services.errors import MetricError


def iod_error(pred: LandmarkSet, gt: LandmarkSet) -> float:
    """100 x mean over visible gt points of ||pred - gt|| / ||left eye - right eye||."""
    if gt.eye_indices is None:
        raise MetricError("ground truth has no eye_indices")
    if len(pred) != len(gt):
        raise MetricError(f"prediction has {len(pred)} points, ground truth {len(gt)}")
    left, right = gt.eye_indices
    iod = float(np.linalg.norm(gt.points[left] - gt.points[right]))
    if iod == 0.0:
        raise MetricError("inter-ocular distance is zero")
    visible = gt.visible
    if not visible.any():
        raise MetricError("no visible ground-truth landmarks")
    distances = np.linalg.norm(pred.points[visible] - gt.points[visible], axis=1)
    return float(100.0 * distances.mean() / iod)


def mean_iod(preds: Sequence[LandmarkSet], gts: Sequence[LandmarkSet]) -> float:
    """Per-image error first, then the mean over images."""
    if not gts:
        raise MetricError("no images to evaluate")
    if len(preds) != len(gts):
        raise MetricError(f"{len(preds)} predictions for {len(gts)} ground-truth images")
    return float(np.mean([iod_error(p, g) for p, g in zip(preds, gts)]))


def _image_size(image: Union[ImageSample, np.ndarray, Tuple[int, int]]) -> Tuple[int, int]:
    if isinstance(image, ImageSample):
        return image.height, image.width
    if isinstance(image, np.ndarray):
        return image.shape[0], image.shape[1]
    return int(image[0]), int(image[1])


def pck(
    preds: Sequence[LandmarkSet],
    gts: Sequence[LandmarkSet],
    images: Sequence[Union[ImageSample, np.ndarray, Tuple[int, int]]],
    threshold_frac: float = 0.05,
) -> float:
    """Percent of visible keypoints within threshold_frac x max(H, W) pixels."""
    if not len(preds) == len(gts) == len(images):
        raise MetricError(f"pck needs one prediction and image per ground truth, got {len(preds)}/{len(gts)}/{len(images)}")
    hits, total = 0, 0
    for pred, gt, image in zip(preds, gts, images):
        height, width = _image_size(image)
        threshold = threshold_frac * max(height, width)
        visible = gt.visible
        distances = np.linalg.norm(pred.points[visible] - gt.points[visible], axis=1)
        hits += int((distances <= threshold).sum())
        total += int(visible.sum())
    if total == 0:
        raise MetricError("no visible keypoints for PCK")
    return 100.0 * hits / total
