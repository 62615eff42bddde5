"""
Checkpoint Service - single-file container shared by every model kind.

Layout: 8-byte magic, 8-byte little-endian header length, JSON header
(format version, kind, config, step, extra, tensor table), then the raw
tensor blobs in the order listed by the header (module state_dict order).
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from landmark_forge.services.errors import CheckpointError, MissingArtifactError

logger = logging.getLogger(__name__)

MAGIC = b"LMFCKPT\x00"
FORMAT_VERSION = 1


def write_container(
    path,
    kind: str,
    config: Dict[str, Any],
    tensors: Dict[str, torch.Tensor],
    step: int = 0,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table, blobs, offset = [], [], 0
    for name, tensor in tensors.items():
        array = np.ascontiguousarray(tensor.detach().cpu().numpy())
        blob = array.tobytes()
        table.append(dict(name=name, dtype=array.dtype.str, shape=list(array.shape), offset=offset, nbytes=len(blob)))
        blobs.append(blob)
        offset += len(blob)
    header = dict(
        format_version=FORMAT_VERSION, kind=kind, config=config, step=int(step), extra=extra or {}, tensors=table
    )
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(encoded)))
        f.write(encoded)
        for blob in blobs:
            f.write(blob)
    tmp.replace(path)
    logger.debug("Wrote %s checkpoint with %d tensors to %s", kind, len(table), path)
    return path


def read_header(path) -> Dict[str, Any]:
    return read_container(path, with_tensors=False)[0]


def read_container(path, with_tensors: bool = True) -> Tuple[Dict[str, Any], Dict[str, torch.Tensor]]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"Checkpoint not found: {path}")
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint container")
        (length,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(length).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: format version {header.get('format_version')} != supported {FORMAT_VERSION}"
            )
        tensors = {}
        if with_tensors:
            payload = f.read()
            for entry in header["tensors"]:
                raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
                array = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
                tensors[entry["name"]] = torch.from_numpy(array)
    return header, tensors


def load_into(module: nn.Module, tensors: Dict[str, torch.Tensor], source) -> None:
    """Copy tensors into module after checking names and shapes in state_dict order."""
    expected = module.state_dict()
    for name, target in expected.items():
        if name not in tensors:
            raise CheckpointError(f"{source}: missing tensor {name}")
        if tuple(tensors[name].shape) != tuple(target.shape):
            raise CheckpointError(
                f"{source}: shape mismatch for tensor {name}: checkpoint {tuple(tensors[name].shape)} "
                f"vs model {tuple(target.shape)}"
            )
    unexpected = [name for name in tensors if name not in expected]
    if unexpected:
        raise CheckpointError(f"{source}: unexpected tensor {unexpected[0]}")
    module.load_state_dict({name: tensors[name] for name in expected}, strict=True)
