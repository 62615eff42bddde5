"""
Extractor Service - frozen feature extractors turning image samples into
feature maps: stage-1 hypercolumns, stage-2 dense maps and NMF-reduced
variants of either.
Used by: matching evaluation, regressor training, feature cache
"""

import hashlib
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from landmark_forge.models.backbone import Backbone
from landmark_forge.schemas.dataset import AugmentationConfig
from landmark_forge.schemas.encoder import BackboneConfig
from landmark_forge.schemas.features import FeatureMap
from landmark_forge.schemas.sample import ImageSample
from landmark_forge.schemas.stage2 import Stage2Config
from landmark_forge.services import checkpoint_service, encoder_service, nmf_service, stage2_service
from landmark_forge.services.augmentation_service import stack_samples
from landmark_forge.services.errors import ConfigError
from landmark_forge.services.hypercolumn_service import build_hypercolumn
from landmark_forge.utils.hashing import path_hash

logger = logging.getLogger(__name__)


class FeatureExtractor:
    """Frozen, batched samples -> FeatureMap callable."""

    name = "base"
    downscale = 4

    def __init__(self, module: nn.Module, aug_cfg: AugmentationConfig, batch_size: int = 32, provenance: str = "memory"):
        self.module = encoder_service.freeze(module)
        self.aug_cfg = aug_cfg
        self.batch_size = batch_size
        self.provenance = provenance

    @property
    def channels(self) -> int:
        raise NotImplementedError

    def _forward(self, images: torch.Tensor) -> FeatureMap:
        raise NotImplementedError

    @torch.no_grad()
    def __call__(self, samples: Sequence[ImageSample]) -> FeatureMap:
        self.module.eval()
        grids, source_size = [], None
        for start in range(0, len(samples), self.batch_size):
            chunk = stack_samples(samples[start:start + self.batch_size], self.aug_cfg)
            features = self._forward(chunk)
            grids.append(features.grid)
            source_size = features.source_size
        return FeatureMap(grid=torch.cat(grids), downscale=self.downscale, source_size=source_size)

    def parameters_digest(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in self.module.state_dict().items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(tensor.detach().cpu().numpy()).tobytes())
        return digest.hexdigest()

    @property
    def key(self) -> str:
        """Identity of the extractor for caching: kind + provenance (or weights digest)."""
        provenance = self.parameters_digest() if self.provenance == "memory" else self.provenance
        return f"{self.name}:{provenance}"


class HypercolumnExtractor(FeatureExtractor):
    name = "hypercolumn"

    def __init__(self, backbone: Backbone, aug_cfg: AugmentationConfig, downscale: int = 4, **kwargs):
        super().__init__(backbone, aug_cfg, **kwargs)
        self.downscale = downscale

    @property
    def channels(self) -> int:
        return self.module.config.hypercolumn_channels

    def _forward(self, images: torch.Tensor) -> FeatureMap:
        return build_hypercolumn(encoder_service.forward_stages(self.module, images), self.downscale)


class DenseExtractor(FeatureExtractor):
    name = "dense"

    @property
    def channels(self) -> int:
        return self.module.output_dim

    def _forward(self, images: torch.Tensor) -> FeatureMap:
        return stage2_service.dense_forward(self.module, images)


class NmfReducedExtractor(FeatureExtractor):
    """Projects a base extractor's features onto an NMF basis of rank r."""

    def __init__(self, base: FeatureExtractor, parts: nmf_service.NmfParts):
        super().__init__(base.module, base.aug_cfg, base.batch_size, base.provenance)
        self.base = base
        self.parts = parts
        self.downscale = base.downscale
        self.name = f"{base.name}+nmf{parts.rank}"

    @property
    def channels(self) -> int:
        return self.parts.rank

    def _forward(self, images: torch.Tensor) -> FeatureMap:
        features = self.base._forward(images)
        coefficients = nmf_service.project_onto_basis(features, self.parts.basis, self.parts.shift)
        grid = torch.as_tensor(coefficients, dtype=features.grid.dtype)
        return FeatureMap(grid=grid, downscale=features.downscale, source_size=features.source_size)

    @property
    def key(self) -> str:
        digest = hashlib.sha256(np.ascontiguousarray(self.parts.basis, dtype=np.float64).tobytes())
        digest.update(repr(float(self.parts.shift)).encode())
        return f"{self.name}:{self.base.key}:{digest.hexdigest()[:16]}"


def nmf_reduce_extractor(
    base: FeatureExtractor, fit_samples: Sequence[ImageSample], rank: int, max_iter: int = 500, tol: float = 1e-5, seed: int = 0
) -> NmfReducedExtractor:
    """Fit an NMF basis on base features of fit_samples and wrap base with the projection."""
    parts = nmf_service.nmf_parts(base(fit_samples), rank, max_iter, tol, seed)
    return NmfReducedExtractor(base, parts)


def load_extractor(kind: str, checkpoint, aug_cfg: AugmentationConfig, batch_size: int = 32) -> FeatureExtractor:
    """
    `dense` needs a stage-2 checkpoint. `hypercolumn` accepts a stage-1
    checkpoint (online backbone) or a stage-2 one (its frozen encoder).
    """
    checkpoint = Path(checkpoint)
    provenance = path_hash(checkpoint)
    header = checkpoint_service.read_header(checkpoint)
    if header["kind"] == stage2_service.DENSE_KIND:
        model = stage2_service.load_dense(checkpoint)
        if kind == "dense":
            return DenseExtractor(model, aug_cfg, batch_size=batch_size, provenance=provenance)
        if kind == "hypercolumn":
            return HypercolumnExtractor(model.encoder, aug_cfg, batch_size=batch_size, provenance=provenance)
    elif header["kind"] == encoder_service.ENCODER_KIND:
        if kind == "hypercolumn":
            encoder = encoder_service.load_checkpoint(checkpoint)
            return HypercolumnExtractor(encoder.online_backbone, aug_cfg, batch_size=batch_size, provenance=provenance)
        raise ConfigError(f"{checkpoint}: a '{kind}' extractor needs a stage 2 checkpoint")
    raise ConfigError(f"{checkpoint}: cannot build a '{kind}' extractor from a '{header['kind']}' checkpoint")


def random_extractor(
    kind: str,
    backbone_cfg: BackboneConfig,
    aug_cfg: AugmentationConfig,
    stage2_cfg: Optional[Stage2Config] = None,
    seed: int = 0,
) -> FeatureExtractor:
    """Randomly initialized frozen extractor; the untrained baseline."""
    stage2_cfg = stage2_cfg or Stage2Config()
    configs = [backbone_cfg.model_dump_json()] + ([stage2_cfg.model_dump_json()] if kind == "dense" else [])
    provenance = f"random{seed}:" + hashlib.sha256("\n".join(configs).encode()).hexdigest()[:16]
    torch.manual_seed(seed)
    if kind == "hypercolumn":
        return HypercolumnExtractor(Backbone(backbone_cfg), aug_cfg, provenance=provenance)
    if kind == "dense":
        model = stage2_service.build_dense_model(backbone_cfg, stage2_cfg)
        return DenseExtractor(model, aug_cfg, provenance=provenance)
    raise ConfigError(f"Unknown extractor kind: {kind}")

