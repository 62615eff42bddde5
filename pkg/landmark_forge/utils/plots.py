"""
Figure helpers - heatmap overlays, landmark overlays, sweep curves, part maps.
"""

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch
import torch.nn.functional as F


def _upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    tensor = torch.as_tensor(grid, dtype=torch.float32)[None, None]
    return F.interpolate(tensor, size=(height, width), mode="bilinear", align_corners=False)[0, 0].numpy()


def save_heatmap_overlay(
    path,
    image: np.ndarray,
    heatmap: np.ndarray,
    point: Optional[Sequence[float]] = None,
    alpha: float = 0.5,
) -> Path:
    """Alpha-blend a grid heatmap over an HxWx3 image and write a PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = image.shape[:2]
    heat = _upsample(heatmap, height, width)
    fig, ax = plt.subplots(figsize=(3, 3), dpi=100)
    ax.imshow(np.clip(image, 0, 1))
    ax.imshow(heat, cmap="jet", alpha=alpha)
    if point is not None:
        ax.scatter([point[0]], [point[1]], s=30, c="white", edgecolors="black")
    ax.axis("off")
    fig.savefig(path, bbox_inches="tight", pad_inches=0)
    plt.close(fig)
    return path


def save_landmark_overlay(path, image: np.ndarray, predicted: np.ndarray, truth: Optional[np.ndarray] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(3, 3), dpi=100)
    ax.imshow(np.clip(image, 0, 1))
    if truth is not None:
        ax.scatter(truth[:, 0], truth[:, 1], s=20, c="lime", marker="o", label="gt")
    ax.scatter(predicted[:, 0], predicted[:, 1], s=20, c="red", marker="x", label="pred")
    ax.axis("off")
    fig.savefig(path, bbox_inches="tight", pad_inches=0)
    plt.close(fig)
    return path


def save_curve(path, xs: Sequence[float], ys_by_label: dict, xlabel: str, ylabel: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4, 3), dpi=100)
    for label, ys in ys_by_label.items():
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_part_overlay(path, image: np.ndarray, parts: np.ndarray) -> Path:
    """Colour each pixel by its dominant part; intensity follows part activation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = image.shape[:2]
    rank = parts.shape[0]
    upsampled = np.stack([_upsample(parts[r], height, width) for r in range(rank)])
    palette = plt.get_cmap("tab10" if rank <= 10 else "tab20")(np.arange(rank) % 20)[:, :3]
    dominant = upsampled.argmax(axis=0)
    strength = upsampled.max(axis=0)
    strength = strength / (strength.max() + 1e-12)
    colours = palette[dominant] * strength[..., None]
    blended = 0.5 * np.clip(image, 0, 1) + 0.5 * colours
    plt.imsave(path, np.clip(blended, 0, 1))
    return path
