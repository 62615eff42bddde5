import hashlib
from pathlib import Path

import numpy as np


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def samples_digest(samples) -> str:
    """Digest of image contents and paths, used to key feature caches."""
    digest = hashlib.sha256()
    for sample in samples:
        digest.update(str(sample.source_path or "").encode())
        digest.update(np.ascontiguousarray(sample.image).tobytes())
    return digest.hexdigest()


def short_hash(value: str) -> str:
    return value[:12]


def path_hash(path) -> str:
    path = Path(path)
    return file_sha256(path) if path.exists() else "none"
