"""
Landmark Service - supervised landmark regression over frozen features:
soft-argmax keypoints, deterministic few-annotation subsets, training with
early stopping on validation IOD, and regressor checkpoints.
Used by: regress command, few-shot and scale sweeps
"""

import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from landmark_forge.models.regressor import LandmarkRegressor
from landmark_forge.schemas.features import FeatureMap
from landmark_forge.schemas.regressor import RegressorConfig
from landmark_forge.schemas.sample import ImageSample, LandmarkSet
from landmark_forge.services import checkpoint_service
from landmark_forge.services.errors import CheckpointError, ConfigError, DatasetError, EncoderError, NumericalError
from landmark_forge.services.feature_cache_service import cached_features
from landmark_forge.services.metrics_service import mean_iod
from landmark_forge.utils.metrics_log import CsvMetricsLog

logger = logging.getLogger(__name__)

REGRESSOR_KIND = "regressor"
METRIC_FIELDS = ("iteration", "loss", "val_iod")


@dataclass
class RegressorResult:
    regressor: LandmarkRegressor
    val_iod: float
    best_iteration: int
    log: CsvMetricsLog


def _check_channels(reg: LandmarkRegressor, features: FeatureMap) -> None:
    if features.channels != reg.in_channels:
        raise EncoderError(f"regressor expects {reg.in_channels} feature channels, got {features.channels}")


def regress_landmarks(
    reg: LandmarkRegressor, features: FeatureMap, eye_indices: Optional[Tuple[int, int]] = None
) -> List[LandmarkSet]:
    """Pixel-space landmarks for every item of the batch, clamped to the image."""
    _check_channels(reg, features)
    reg.eval()
    with torch.no_grad():
        normalized = reg(features.grid).double().numpy()
    height, width = features.source_size
    pixels = normalized * np.array([width, height], dtype=np.float64)
    pixels[..., 0] = np.clip(pixels[..., 0], 0.0, np.nextafter(width, 0))
    pixels[..., 1] = np.clip(pixels[..., 1], 0.0, np.nextafter(height, 0))
    return [LandmarkSet.from_points(points, eye_indices) for points in pixels]


def select_subset(n_annotations: int, available: int, seed: int) -> np.ndarray:
    """First n indices of a seeded permutation; nested across n for a fixed seed."""
    if n_annotations < 1:
        raise ConfigError(f"n_annotations must be >= 1, got {n_annotations}")
    if n_annotations > available:
        raise ConfigError(f"n_annotations {n_annotations} exceeds the {available} annotated samples")
    return np.random.default_rng(seed).permutation(available)[:n_annotations]


def _targets(landmarks: Sequence[LandmarkSet], source_size: Tuple[int, int]) -> Tuple[torch.Tensor, torch.Tensor]:
    height, width = source_size
    points = np.stack([lm.points for lm in landmarks]) / np.array([width, height], dtype=np.float64)
    visible = np.stack([lm.visible for lm in landmarks])
    return torch.as_tensor(points, dtype=torch.float32), torch.as_tensor(visible, dtype=torch.float32)


def landmark_loss(predicted: torch.Tensor, targets: torch.Tensor, visible: torch.Tensor) -> torch.Tensor:
    """Squared L2 over visible normalized coordinates, averaged over visible points."""
    squared = ((predicted - targets) ** 2).sum(dim=-1) * visible
    return squared.sum() / visible.sum().clamp_min(1.0)


def _val_iod(reg: LandmarkRegressor, features: FeatureMap, landmarks: Sequence[LandmarkSet]) -> float:
    preds = regress_landmarks(reg, features, landmarks[0].eye_indices)
    return mean_iod(preds, landmarks)


def fit_regressor(
    train_features: FeatureMap,
    train_landmarks: Sequence[LandmarkSet],
    val_features: FeatureMap,
    val_landmarks: Sequence[LandmarkSet],
    cfg: RegressorConfig,
    log_path=None,
) -> RegressorResult:
    """
    Train a regressor on precomputed features; keeps the weights with the
    best validation IOD and stops after `patience` evaluations without gain.
    """
    if len(train_landmarks) < 1:
        raise DatasetError("no annotated training samples")
    torch.manual_seed(cfg.seed)
    reg = LandmarkRegressor(train_features.channels, len(train_landmarks[0]), cfg)
    features = train_features.grid.float()
    targets, visible = _targets(train_landmarks, train_features.source_size)
    if cfg.optimizer == "adam":
        optimizer = torch.optim.Adam(reg.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    else:
        optimizer = torch.optim.SGD(reg.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    generator = torch.Generator().manual_seed(cfg.seed)
    batch_size = min(cfg.batch_size, len(train_landmarks))
    log = CsvMetricsLog(log_path, METRIC_FIELDS)

    best_iod, best_state, best_iteration, stale = float("inf"), copy.deepcopy(reg.state_dict()), 0, 0
    for iteration in tqdm(range(1, cfg.iterations + 1), desc="regressor", leave=False):
        reg.train()
        index = torch.randperm(len(train_landmarks), generator=generator)[:batch_size]
        loss = landmark_loss(reg(features[index]), targets[index], visible[index])
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite regressor loss at iteration {iteration} (lr={cfg.lr:.6g})")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        if iteration % cfg.eval_every == 0 or iteration == cfg.iterations:
            iod = _val_iod(reg, val_features, val_landmarks)
            log.append(iteration=iteration, loss=float(loss), val_iod=iod)
            log.flush()
            if iod < best_iod:
                best_iod, best_state, best_iteration, stale = iod, copy.deepcopy(reg.state_dict()), iteration, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    logger.debug("Early stop at iteration %d (best %d)", iteration, best_iteration)
                    break
    reg.load_state_dict(best_state)
    reg.eval()
    return RegressorResult(regressor=reg, val_iod=best_iod, best_iteration=best_iteration, log=log)


def annotated(samples: Sequence[ImageSample]) -> List[ImageSample]:
    return [s for s in samples if s.landmarks is not None]


def train_regressor(
    extractor,
    train_samples: Sequence[ImageSample],
    val_samples: Sequence[ImageSample],
    n_annotations: Optional[int],
    cfg: RegressorConfig,
    cache_dir=None,
    log_path=None,
) -> RegressorResult:
    """
    Regressor over a frozen extractor using a seeded subset of n_annotations
    training samples (None -> all annotated samples).
    """
    train_samples, val_samples = annotated(train_samples), annotated(val_samples)
    if not val_samples:
        raise DatasetError("no annotated validation samples")
    n = len(train_samples) if n_annotations is None else n_annotations
    subset = [train_samples[i] for i in select_subset(n, len(train_samples), cfg.seed)]
    train_features = cached_features(extractor, subset, cache_dir)
    val_features = cached_features(extractor, val_samples, cache_dir)
    result = fit_regressor(
        train_features,
        [s.landmarks for s in subset],
        val_features,
        [s.landmarks for s in val_samples],
        cfg,
        log_path,
    )
    logger.info("Regressor on %d annotations: val IOD %.2f%% (iteration %d)", n, result.val_iod, result.best_iteration)
    return result


def regressor_flops(feature_dim: int, grid: Tuple[int, int], n_virtual: int, n_landmarks: int) -> int:
    """Multiply-accumulates per image: 1x1 conv, soft-argmax expectation, linear head."""
    h, w = grid
    conv = h * w * feature_dim * n_virtual
    expectation = 2 * h * w * n_virtual
    linear = (2 * n_virtual) * (2 * n_landmarks)
    return conv + expectation + linear


def save_regressor(reg: LandmarkRegressor, path, extractor_key: str = "memory") -> Path:
    config = dict(regressor=reg.config.model_dump(), in_channels=reg.in_channels, n_landmarks=reg.n_landmarks)
    return checkpoint_service.write_container(
        path, REGRESSOR_KIND, config, reg.state_dict(), extra=dict(extractor=extractor_key)
    )


def load_regressor(path) -> LandmarkRegressor:
    header, tensors = checkpoint_service.read_container(path)
    if header["kind"] != REGRESSOR_KIND:
        raise CheckpointError(f"{path}: expected a {REGRESSOR_KIND} checkpoint, found {header['kind']}")
    config = header["config"]
    reg = LandmarkRegressor(config["in_channels"], config["n_landmarks"], RegressorConfig(**config["regressor"]))
    checkpoint_service.load_into(reg, tensors, path)
    reg.eval()
    return reg
