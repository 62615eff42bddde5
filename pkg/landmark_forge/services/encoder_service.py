"""
Encoder Service - multi-scale backbone forward, instance embeddings,
momentum (EMA) target updates and encoder checkpoints.
Used by: stage1 trainer, stage2 teacher, hypercolumn extractor
"""

import copy
import logging
from typing import List, Literal, Optional

import torch
import torch.nn as nn

from landmark_forge.models.backbone import Backbone
from landmark_forge.models.encoder import InstanceEncoder
from landmark_forge.schemas.encoder import BackboneConfig
from landmark_forge.schemas.features import FeatureMap
from landmark_forge.services import checkpoint_service
from landmark_forge.services.errors import CheckpointError, EncoderError

logger = logging.getLogger(__name__)

ENCODER_KIND = "encoder"


def build_encoder(config: BackboneConfig, momentum: float = 0.99, seed: Optional[int] = None) -> InstanceEncoder:
    if seed is not None:
        torch.manual_seed(seed)
    return InstanceEncoder(config, momentum=momentum)


def check_input(images: torch.Tensor, config: BackboneConfig) -> torch.Tensor:
    if images.dim() == 3:
        images = images.unsqueeze(0)
    if images.dim() != 4 or images.shape[1] != 3:
        raise EncoderError(f"expected (N, 3, H, W) input, got {tuple(images.shape)}")
    height, width = images.shape[-2:]
    if height != width:
        raise EncoderError(f"input must be square, got {height}x{width}")
    if height < config.stage_downscales[-1]:
        raise EncoderError(f"input {height}x{width} is smaller than the coarsest downscale {config.stage_downscales[-1]}")
    if height % config.stage_downscales[-1]:
        raise EncoderError(f"input {height}x{width} is not a multiple of the coarsest downscale {config.stage_downscales[-1]}")
    return images


def forward_stages(backbone: Backbone, images: torch.Tensor) -> List[FeatureMap]:
    """Stage outputs at downscales 4/8/16/32."""
    images = check_input(images, backbone.config)
    source_size = tuple(images.shape[-2:])
    outputs = backbone(images)
    return [
        FeatureMap(grid=grid, downscale=downscale, source_size=source_size)
        for grid, downscale in zip(outputs, backbone.config.stage_downscales)
    ]


def pooled_features(backbone: Backbone, images: torch.Tensor) -> torch.Tensor:
    last = forward_stages(backbone, images)[-1].grid
    return last.mean(dim=(2, 3))


def embed(
    state: InstanceEncoder,
    images: torch.Tensor,
    branch: Literal["online", "target"] = "online",
    predict: bool = False,
) -> torch.Tensor:
    """
    Global-pooled last-stage features through the branch projector.

    predict=True additionally applies the online predictor (online branch only).
    The target branch is computed without gradient.
    """
    if branch == "online":
        z = state.online_projector(pooled_features(state.online_backbone, images))
        return state.online_predictor(z) if predict else z
    if branch == "target":
        if predict:
            raise ValueError("the target branch has no predictor")
        with torch.no_grad():
            return state.target_projector(pooled_features(state.target_backbone, images))
    raise ValueError(f"Unknown branch: {branch}")


@torch.no_grad()
def ema_update(state: InstanceEncoder, momentum: Optional[float] = None) -> InstanceEncoder:
    """t <- m * t + (1 - m) * o for the target backbone and target projector."""
    m = state.momentum if momentum is None else momentum
    with state.lock:
        for online, target in (
            (state.online_backbone, state.target_backbone),
            (state.online_projector, state.target_projector),
        ):
            for o, t in zip(online.parameters(), target.parameters()):
                t.mul_(m).add_(o, alpha=1.0 - m)
    return state


def snapshot(state: InstanceEncoder) -> InstanceEncoder:
    """Read-only copy for evaluation; consistent with respect to ema_update."""
    with state.lock:
        clone = copy.deepcopy(state)
    clone.eval()
    for param in clone.parameters():
        param.requires_grad = False
    return clone


def sync_target(state: InstanceEncoder) -> InstanceEncoder:
    return ema_update(state, momentum=0.0)


def save_checkpoint(state: InstanceEncoder, path, extra: Optional[dict] = None):
    config = dict(backbone=state.config.model_dump(), momentum=state.momentum)
    with state.lock:
        return checkpoint_service.write_container(
            path, ENCODER_KIND, config, state.state_dict(), step=int(state.step), extra=extra
        )


def load_checkpoint(path, config: Optional[BackboneConfig] = None) -> InstanceEncoder:
    """
    Rebuild the encoder described by the checkpoint header. Passing `config`
    loads into that configuration instead, failing on the first shape mismatch.
    """
    header, tensors = checkpoint_service.read_container(path)
    if header["kind"] != ENCODER_KIND:
        raise CheckpointError(f"{path}: expected an {ENCODER_KIND} checkpoint, found {header['kind']}")
    backbone_config = config or BackboneConfig(**header["config"]["backbone"])
    state = InstanceEncoder(backbone_config, momentum=header["config"].get("momentum", 0.99))
    checkpoint_service.load_into(state, tensors, path)
    if int(state.step) != header["step"]:
        raise CheckpointError(f"{path}: step buffer {int(state.step)} disagrees with header step {header['step']}")
    logger.info("Loaded encoder checkpoint %s at step %d", path, header["step"])
    return state


def freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for param in module.parameters():
        param.requires_grad = False
    return module
