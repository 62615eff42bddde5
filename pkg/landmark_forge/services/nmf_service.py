"""
NMF Service - multiplicative-update non-negative matrix factorization of
stacked feature maps: part discovery heatmaps and a low-rank projection
baseline for matching.
Used by: nmf evaluation protocol, NMF-reduced extractor
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple, Union

import numpy as np
import torch

from landmark_forge.schemas.features import FeatureMap
from landmark_forge.services.errors import ConfigError

logger = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class NmfParts:
    basis: np.ndarray       # (r, C)
    heat: np.ndarray        # (N, r, h, w)
    shift: float
    errors: List[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.basis.shape[0]


def relative_error(matrix: np.ndarray, coefficients: np.ndarray, basis: np.ndarray) -> float:
    return float(np.linalg.norm(matrix - coefficients @ basis) / max(np.linalg.norm(matrix), EPS))


def nmf(
    matrix: np.ndarray, rank: int, max_iter: int = 500, tol: float = 1e-5, seed: int = 0
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """
    Factor a non-negative (n, C) matrix as A (n, r) @ B (r, C).

    Random-uniform initialization scaled by the matrix mean. errors[0] is the
    initial relative error; one entry follows every update. Stops once the
    relative change of the error drops below tol.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ConfigError(f"nmf expects a 2-D matrix, got shape {matrix.shape}")
    if matrix.min() < 0:
        raise ConfigError("nmf input must be non-negative; shift it first")
    n, c = matrix.shape
    if rank < 1 or rank > min(n, c):
        raise ConfigError(f"rank {rank} must be in [1, {min(n, c)}] for a {n}x{c} matrix")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(matrix.mean(), EPS) / rank)
    coefficients = rng.uniform(0.0, 1.0, size=(n, rank)) * scale
    basis = rng.uniform(0.0, 1.0, size=(rank, c)) * scale
    errors = [relative_error(matrix, coefficients, basis)]
    for iteration in range(max_iter):
        basis *= (coefficients.T @ matrix) / (coefficients.T @ coefficients @ basis + EPS)
        coefficients *= (matrix @ basis.T) / (coefficients @ (basis @ basis.T) + EPS)
        errors.append(relative_error(matrix, coefficients, basis))
        if tol > 0 and abs(errors[-2] - errors[-1]) <= tol * max(errors[-2], EPS):
            break
    logger.debug("NMF rank %d stopped after %d updates, error %.3g", rank, len(errors) - 1, errors[-1])
    return coefficients, basis, errors


def _as_array(features: Union[FeatureMap, torch.Tensor, np.ndarray]) -> np.ndarray:
    if isinstance(features, FeatureMap):
        features = features.grid
    if isinstance(features, torch.Tensor):
        features = features.detach().cpu().double().numpy()
    return np.asarray(features, dtype=np.float64)


def to_pixel_matrix(grid: np.ndarray) -> np.ndarray:
    """(N, C, h, w) -> (N*h*w, C)."""
    return grid.transpose(0, 2, 3, 1).reshape(-1, grid.shape[1])


def nonnegative_shift(matrix: np.ndarray) -> float:
    return float(max(0.0, -matrix.min()))


def nmf_parts(
    feature_maps: Union[FeatureMap, torch.Tensor, np.ndarray],
    rank: int,
    max_iter: int = 500,
    tol: float = 1e-5,
    seed: int = 0,
) -> NmfParts:
    """Part heatmaps for each image from an NMF of all pixels' feature vectors."""
    grid = _as_array(feature_maps)
    n, _, h, w = grid.shape
    matrix = to_pixel_matrix(grid)
    shift = nonnegative_shift(matrix)
    coefficients, basis, errors = nmf(matrix + shift, rank, max_iter, tol, seed)
    heat = coefficients.reshape(n, h, w, rank).transpose(0, 3, 1, 2)
    logger.info("NMF parts: rank %d over %d pixels, shift %.4g, final error %.4f", rank, matrix.shape[0], shift, errors[-1])
    return NmfParts(basis=basis, heat=heat, shift=shift, errors=errors)


def project_onto_basis(
    feature_maps: Union[FeatureMap, torch.Tensor, np.ndarray], basis: np.ndarray, shift: float, iterations: int = 100
) -> np.ndarray:
    """Non-negative coefficients (N, r, h, w) of shifted features against a fixed basis."""
    grid = _as_array(feature_maps)
    n, _, h, w = grid.shape
    matrix = np.clip(to_pixel_matrix(grid) + shift, 0.0, None)
    rank = basis.shape[0]
    # least-squares start, clipped, then multiplicative refinement
    coefficients = np.clip(matrix @ np.linalg.pinv(basis), EPS, None)
    gram = basis @ basis.T
    numerator = matrix @ basis.T
    for _ in range(iterations):
        coefficients *= numerator / (coefficients @ gram + EPS)
    return coefficients.reshape(n, h, w, rank).transpose(0, 3, 1, 2)
