"""
Feature Cache Service - on-disk cache of frozen-extractor feature maps,
one container record per image keyed by (extractor provenance, image digest).
"""

import hashlib
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import torch

from landmark_forge.schemas.features import FeatureMap
from landmark_forge.schemas.sample import ImageSample
from landmark_forge.services import checkpoint_service
from landmark_forge.services.errors import CheckpointError
from landmark_forge.utils.hashing import samples_digest, short_hash

logger = logging.getLogger(__name__)

FEATURE_KIND = "features"


def record_path(cache_dir, extractor_key: str, sample_hash: str) -> Path:
    folder = hashlib.sha256(extractor_key.encode()).hexdigest()[:16]
    return Path(cache_dir) / folder / f"{short_hash(sample_hash)}.feat"


def write_record(path, grid: torch.Tensor, downscale: int, source_size, extractor_key: str, sample_hash: str) -> Path:
    config = dict(downscale=downscale, source_size=list(source_size), extractor=extractor_key, sample=sample_hash)
    return checkpoint_service.write_container(path, FEATURE_KIND, config, {"grid": grid})


def read_record(path, extractor_key: str, sample_hash: str) -> FeatureMap:
    header, tensors = checkpoint_service.read_container(path)
    config = header["config"]
    if header["kind"] != FEATURE_KIND or config["extractor"] != extractor_key or config["sample"] != sample_hash:
        raise CheckpointError(f"{path}: feature record provenance does not match")
    return FeatureMap(grid=tensors["grid"], downscale=config["downscale"], source_size=tuple(config["source_size"]))


def cached_features(extractor, samples: Sequence[ImageSample], cache_dir=None) -> FeatureMap:
    """extractor(samples), reading and filling the cache when cache_dir is set."""
    if cache_dir is None:
        return extractor(samples)
    key = extractor.key
    hashes = [samples_digest([sample]) for sample in samples]
    grids: List[Optional[torch.Tensor]] = [None] * len(samples)
    meta = None
    missing = []
    for index, sample_hash in enumerate(hashes):
        path = record_path(cache_dir, key, sample_hash)
        if path.exists():
            record = read_record(path, key, sample_hash)
            grids[index] = record.grid
            meta = (record.downscale, record.source_size)
        else:
            missing.append(index)
    if missing:
        computed = extractor([samples[i] for i in missing])
        meta = (computed.downscale, computed.source_size)
        for offset, index in enumerate(missing):
            grid = computed.grid[offset:offset + 1]
            grids[index] = grid
            write_record(record_path(cache_dir, key, hashes[index]), grid, *meta, key, hashes[index])
    logger.info("Feature cache: %d hits, %d computed", len(samples) - len(missing), len(missing))
    return FeatureMap(grid=torch.cat(grids), downscale=meta[0], source_size=meta[1])
