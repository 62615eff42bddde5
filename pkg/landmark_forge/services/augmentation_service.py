"""
Augmentation Service - two-view pipeline for self-supervised training,
evaluation crops, padding-based zoom/unaligned crops and input normalization.
All randomness is drawn from an explicit numpy Generator.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.functional as TF
from torch.utils.data import Dataset

from landmark_forge.schemas.dataset import AugmentationConfig
from landmark_forge.schemas.sample import ImageSample, ViewPair


@dataclass(frozen=True)
class ViewParams:
    top: int
    left: int
    side: int
    flip: bool
    jitter: Optional[Tuple[float, float, float, float]]  # brightness, contrast, saturation, hue
    grayscale: bool
    blur_sigma: Optional[float]
    solarize: bool


def _sample_view_params(cfg: AugmentationConfig, rng: np.random.Generator, solarize_prob: float) -> ViewParams:
    size = cfg.resize_size
    low, high = cfg.crop_scale_range
    area = rng.uniform(low, high)
    side = int(np.clip(round(size * np.sqrt(area)), 1, size))
    top = int(rng.integers(0, size - side + 1))
    left = int(rng.integers(0, size - side + 1))
    flip = bool(rng.random() < cfg.flip_prob)
    jitter = None
    if rng.random() < cfg.color_jitter_prob:
        jitter = (
            float(rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)),
            float(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)),
            float(rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)),
            float(rng.uniform(-cfg.hue, cfg.hue)),
        )
    grayscale = bool(rng.random() < cfg.grayscale_prob)
    blur_sigma = float(rng.uniform(0.1, 2.0)) if rng.random() < cfg.blur_prob else None
    solarize = bool(rng.random() < solarize_prob)
    return ViewParams(top, left, side, flip, jitter, grayscale, blur_sigma, solarize)


def _view_affine(source_hw: Tuple[int, int], cfg: AugmentationConfig, params: ViewParams) -> np.ndarray:
    """3x3 map from source pixel coordinates to view pixel coordinates."""
    height, width = source_hw
    scale = cfg.crop_size / params.side
    resize = np.diag([cfg.resize_size / width, cfg.resize_size / height, 1.0])
    crop = np.array([[scale, 0, -params.left * scale], [0, scale, -params.top * scale], [0, 0, 1]], dtype=np.float64)
    affine = crop @ resize
    if params.flip:
        affine = np.array([[-1, 0, cfg.crop_size], [0, 1, 0], [0, 0, 1]], dtype=np.float64) @ affine
    return affine


def _apply_view(resized: torch.Tensor, cfg: AugmentationConfig, params: ViewParams) -> torch.Tensor:
    view = TF.resized_crop(resized, params.top, params.left, params.side, params.side,
                           [cfg.crop_size, cfg.crop_size], antialias=True)
    if params.flip:
        view = TF.hflip(view)
    if params.jitter is not None:
        brightness, contrast, saturation, hue = params.jitter
        view = TF.adjust_brightness(view, brightness)
        view = TF.adjust_contrast(view, contrast)
        view = TF.adjust_saturation(view, saturation)
        view = TF.adjust_hue(view, hue)
    if params.grayscale:
        view = TF.rgb_to_grayscale(view, num_output_channels=3)
    if params.blur_sigma is not None:
        kernel = max(3, (cfg.crop_size // 10) | 1)
        view = TF.gaussian_blur(view, [kernel, kernel], [params.blur_sigma, params.blur_sigma])
    if params.solarize:
        view = TF.solarize(view, 0.5)
    return view.clamp(0.0, 1.0)


def _to_sample(view: torch.Tensor, source: ImageSample, affine: np.ndarray) -> ImageSample:
    landmarks = source.landmarks.transform(affine) if source.landmarks is not None else None
    return ImageSample(
        image=view.permute(1, 2, 0).numpy(),
        landmarks=landmarks,
        identity_id=source.identity_id,
        source_path=source.source_path,
    )


def resize_tensor(sample: ImageSample, size: int) -> torch.Tensor:
    """Resize to size x size; smaller images are upscaled."""
    return TF.resize(sample.to_tensor(), [size, size], antialias=True)


def make_two_views(sample: ImageSample, cfg: AugmentationConfig, rng: np.random.Generator) -> ViewPair:
    """
    Two independently augmented crop_size x crop_size views of one sample.

    Solarization is applied to the key view only. Both view affines are
    recorded so `geometry` maps query pixels to key pixels.
    """
    resized = resize_tensor(sample, cfg.resize_size)
    query_params = _sample_view_params(cfg, rng, solarize_prob=0.0)
    key_params = _sample_view_params(cfg, rng, solarize_prob=cfg.solarize_prob_target_only)
    source_hw = (sample.height, sample.width)
    query_affine = _view_affine(source_hw, cfg, query_params)
    key_affine = _view_affine(source_hw, cfg, key_params)
    return ViewPair(
        query_view=_to_sample(_apply_view(resized, cfg, query_params), sample, query_affine),
        key_view=_to_sample(_apply_view(resized, cfg, key_params), sample, key_affine),
        geometry=key_affine @ np.linalg.inv(query_affine),
        query_affine=query_affine,
        key_affine=key_affine,
    )


def eval_view(sample: ImageSample, cfg: AugmentationConfig) -> ImageSample:
    """Resize to resize_size, then take the central crop_size crop."""
    resized = resize_tensor(sample, cfg.resize_size)
    offset = (cfg.resize_size - cfg.crop_size) // 2
    view = resized[:, offset:offset + cfg.crop_size, offset:offset + cfg.crop_size].clamp(0.0, 1.0)
    affine = np.array([[1, 0, -offset], [0, 1, -offset], [0, 0, 1]], dtype=np.float64) @ np.diag(
        [cfg.resize_size / sample.width, cfg.resize_size / sample.height, 1.0]
    )
    return _to_sample(view, sample, affine)


def pad_and_resize(sample: ImageSample, margin: int, shift: Tuple[int, int], out_size: int) -> ImageSample:
    """
    Enlarge the square image window by `margin` pixels per side (edge pixels
    replicated), move it by `shift` = (dx, dy) pixels and resize it to out_size.
    """
    side = sample.height
    extra = margin + max(abs(shift[0]), abs(shift[1]))
    tensor = sample.to_tensor()[None]
    padded = F.pad(tensor, (extra, extra, extra, extra), mode="replicate")[0] if extra > 0 else tensor[0]
    window = side + 2 * margin
    top = extra - margin + shift[1]
    left = extra - margin + shift[0]
    view = TF.resized_crop(padded, top, left, window, window, [out_size, out_size], antialias=True).clamp(0.0, 1.0)
    scale = out_size / window
    affine = np.array([[scale, 0, (extra - left) * scale], [0, scale, (extra - top) * scale], [0, 0, 1]], dtype=np.float64)
    return _to_sample(view, sample, affine)


def make_unaligned(sample: ImageSample, cfg: AugmentationConfig, rng: np.random.Generator) -> ImageSample:
    """Enlarge the face box by a random margin and shift it, breaking alignment."""
    enlarge = rng.uniform(*cfg.unaligned_margin)
    margin = int(round(sample.height * enlarge / 2))
    shift = (int(rng.integers(-margin, margin + 1)), int(rng.integers(-margin, margin + 1))) if margin > 0 else (0, 0)
    return pad_and_resize(sample, margin, shift, sample.height)


def normalize_batch(images: torch.Tensor, cfg: AugmentationConfig) -> torch.Tensor:
    mean = torch.tensor(cfg.mean, dtype=images.dtype).view(1, 3, 1, 1)
    std = torch.tensor(cfg.std, dtype=images.dtype).view(1, 3, 1, 1)
    return (images - mean) / std


def stack_samples(samples: Sequence[ImageSample], cfg: AugmentationConfig) -> torch.Tensor:
    """Normalized (N, 3, H, W) model input."""
    return normalize_batch(torch.stack([s.to_tensor() for s in samples]), cfg)


class TwoViewDataset(Dataset):
    """
    Per-item generator derived from (seed, epoch, index): items are identical no
    matter which worker produces them, so the dataset shards freely.
    """

    def __init__(self, samples: List[ImageSample], cfg: AugmentationConfig, seed: int = 0):
        self.samples = samples
        self.cfg = cfg
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.epoch, index]))
        pair = make_two_views(self.samples[index], self.cfg, rng)
        query = normalize_batch(pair.query_view.to_tensor()[None], self.cfg)[0]
        key = normalize_batch(pair.key_view.to_tensor()[None], self.cfg)[0]
        return query, key
