import torch
import torch.nn as nn

from landmark_forge.schemas.regressor import RegressorConfig


def softargmax(heatmap: torch.Tensor, beta: float) -> torch.Tensor:
    """
    Expected normalized (x, y) under softmax(beta * heatmap) over the last two
    dims. Cell (i, j) sits at ((j + 0.5) / w, (i + 0.5) / h).
    """
    h, w = heatmap.shape[-2:]
    mass = torch.softmax(beta * heatmap.flatten(-2), dim=-1).reshape(heatmap.shape)
    xs = (torch.arange(w, dtype=heatmap.dtype, device=heatmap.device) + 0.5) / w
    ys = (torch.arange(h, dtype=heatmap.dtype, device=heatmap.device) + 0.5) / h
    x = (mass.sum(dim=-2) * xs).sum(dim=-1)
    y = (mass.sum(dim=-1) * ys).sum(dim=-1)
    return torch.stack([x, y], dim=-1)


class LandmarkRegressor(nn.Module):
    """
    1x1 conv to M virtual-keypoint heatmaps, soft-argmax, then a linear map
    from the 2M coordinates to 2K landmark coordinates (normalized [0, 1]).

    wiring="direct" regresses K heatmaps and uses their soft-argmax directly.
    """

    def __init__(self, in_channels: int, n_landmarks: int, config: RegressorConfig = RegressorConfig()):
        super().__init__()
        self.config = config
        self.in_channels = in_channels
        self.n_landmarks = n_landmarks
        heatmaps = config.n_virtual if config.wiring == "virtual" else n_landmarks
        self.heatmap_conv = nn.Conv2d(in_channels, heatmaps, 1)
        self.linear_head = nn.Linear(2 * heatmaps, 2 * n_landmarks) if config.wiring == "virtual" else None

    def virtual_keypoints(self, features: torch.Tensor) -> torch.Tensor:
        """(N, M, 2) soft-argmax locations of the intermediate heatmaps."""
        return softargmax(self.heatmap_conv(features), self.config.beta)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        points = self.virtual_keypoints(features)
        if self.linear_head is None:
            return points
        return self.linear_head(points.flatten(1)).view(-1, self.n_landmarks, 2)
