from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from landmark_forge.models.backbone import Backbone
from landmark_forge.models.heads import ConvProjector
from landmark_forge.schemas.encoder import BackboneConfig
from landmark_forge.schemas.stage2 import Stage2Config


class FpnDecoder(nn.Module):
    """
    Lateral 1x1 convs, top-down nearest upsample-add, 3x3 output conv on the
    finest level. Output sits at the first stage's resolution (1/4).
    """

    def __init__(self, in_channels: List[int], fpn_channels: int, out_channels: int):
        super().__init__()
        self.lateral = nn.ModuleList([nn.Conv2d(c, fpn_channels, 1) for c in in_channels])
        self.output = nn.Conv2d(fpn_channels, out_channels, 3, padding=1)

    def forward(self, stages: List[torch.Tensor]) -> torch.Tensor:
        top = self.lateral[-1](stages[-1])
        for index in range(len(stages) - 2, -1, -1):
            lateral = self.lateral[index](stages[index])
            top = lateral + F.interpolate(top, size=lateral.shape[-2:], mode="nearest")
        return self.output(top)


class DenseModel(nn.Module):
    """
    Frozen backbone (initialized from the stage-1 online backbone), trainable
    FPN decoder and optional per-position projection head.

    The backbone stays in eval mode and never requires gradients.
    """

    def __init__(self, backbone_config: BackboneConfig, config: Stage2Config):
        super().__init__()
        self.backbone_config = backbone_config
        self.config = config
        self.encoder = Backbone(backbone_config)
        self.decoder = FpnDecoder(backbone_config.stage_channels, config.fpn_channels, config.output_dim)
        self.projector: Optional[ConvProjector] = None
        if config.projector_dim is not None:
            self.projector = ConvProjector(config.output_dim, config.projector_hidden, config.projector_dim)
        for param in self.encoder.parameters():
            param.requires_grad = False

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def trainable_parameters(self):
        yield from self.decoder.parameters()
        if self.projector is not None:
            yield from self.projector.parameters()

    def train(self, mode: bool = True):
        super().train(mode)
        self.encoder.eval()
        return self
