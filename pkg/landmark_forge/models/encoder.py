import copy
import threading

import torch
import torch.nn as nn

from landmark_forge.models.backbone import Backbone
from landmark_forge.models.heads import MLPHead
from landmark_forge.schemas.encoder import BackboneConfig


class InstanceEncoder(nn.Module):
    """
    Online backbone + projector + predictor and their momentum-averaged
    target copies (backbone + projector only).

    Target parameters never require gradients; they change only through
    ema_update in encoder_service.
    """

    def __init__(self, config: BackboneConfig, momentum: float = 0.99):
        super().__init__()
        self.config = config
        dim = config.embedding_dim
        hidden = dim * config.hidden_multiplier
        self.online_backbone = Backbone(config)
        self.online_projector = MLPHead(config.stage_channels[-1], hidden, dim)
        self.online_predictor = MLPHead(dim, hidden, dim)
        self.target_backbone = copy.deepcopy(self.online_backbone)
        self.target_projector = copy.deepcopy(self.online_projector)
        for param in self.target_parameters():
            param.requires_grad = False
        self.momentum = momentum
        self.register_buffer("step", torch.zeros((), dtype=torch.long))
        self.lock = threading.Lock()

    def online_parameters(self):
        yield from self.online_backbone.parameters()
        yield from self.online_projector.parameters()
        yield from self.online_predictor.parameters()

    def target_parameters(self):
        yield from self.target_backbone.parameters()
        yield from self.target_projector.parameters()

    def __deepcopy__(self, memo):
        # the lock is not copyable; snapshots get their own
        lock = self.lock
        del self.lock
        try:
            clone = copy.copy(self)
            clone.__dict__ = copy.deepcopy(self.__dict__, memo)
        finally:
            self.lock = lock
        clone.lock = threading.Lock()
        return clone
