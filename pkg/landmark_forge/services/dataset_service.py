"""
Dataset Service - image folder + landmark CSV ingestion, dataset
materialization, and same/different identity pairing for matching evaluation.

Layout: root/images/*.png|jpg, optional root/landmarks.csv
(header `file,x0,y0,...,x{K-1},y{K-1}[,identity]`), optional root/pairs.txt
(lines `ref_file query_file same|diff`).
"""

import csv
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from landmark_forge.schemas.sample import ImageSample, LandmarkSet
from landmark_forge.services.errors import DatasetError, MissingArtifactError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def _parse_annotations(path: Path, eye_indices: Tuple[int, int]) -> List[dict]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty annotation file")
        if not header or header[0] != "file":
            raise DatasetError(f"{path}: header must start with 'file', got {header[:1]}")
        has_identity = header[-1] == "identity"
        coord_columns = len(header) - 1 - int(has_identity)
        if coord_columns < 2 or coord_columns % 2:
            raise DatasetError(f"{path}: expected x/y column pairs after 'file', got {coord_columns} columns")
        for line_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{line_number}: expected {len(header)} fields, got {len(row)}")
            coords = row[1:1 + coord_columns]
            values, visible = [], []
            for column, raw in enumerate(coords):
                raw = raw.strip()
                if raw == "":
                    values.append(-1.0)
                    visible.append(False)
                    continue
                try:
                    values.append(float(raw))
                except ValueError:
                    raise DatasetError(f"{path}:{line_number}: malformed coordinate {raw!r} in column {header[column + 1]}")
                visible.append(True)
            points = np.array(values, dtype=np.float64).reshape(-1, 2)
            point_visible = np.array(visible).reshape(-1, 2).all(axis=1)
            identity = -1
            if has_identity:
                try:
                    identity = int(row[-1])
                except ValueError:
                    raise DatasetError(f"{path}:{line_number}: malformed identity {row[-1]!r}")
            rows.append(dict(file=row[0], points=points, visible=point_visible, identity=identity, line=line_number))
    eye_ok = all(0 <= i < rows[0]["points"].shape[0] for i in eye_indices) if rows else True
    if not eye_ok:
        raise DatasetError(f"{path}: eye_indices {eye_indices} out of range")
    return rows


class FolderDataset(Sequence):
    """Lazy sequence of ImageSamples; images are read on access."""

    def __init__(self, entries: List[dict], eye_indices: Tuple[int, int]):
        self.entries = entries
        self.eye_indices = tuple(eye_indices)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        entry = self.entries[index]
        landmarks = None
        if entry.get("points") is not None:
            landmarks = LandmarkSet(points=entry["points"], visible=entry["visible"], eye_indices=self.eye_indices)
        return ImageSample(
            image=read_image(entry["path"]),
            landmarks=landmarks,
            identity_id=entry.get("identity", -1),
            source_path=str(entry["path"]),
        )


def load_dataset(root, annotations=None, eye_indices: Tuple[int, int] = (0, 1)) -> FolderDataset:
    """
    Open a dataset directory.

    Without annotations every image under root/images is a sample without
    landmarks (unsupervised pretraining). With annotations, rows define the
    samples; a row naming a missing image is a hard error.
    """
    root = Path(root)
    if not root.exists():
        raise MissingArtifactError(f"Dataset root not found: {root}")
    image_dir = root / "images"
    if annotations is None and (root / "landmarks.csv").exists():
        annotations = root / "landmarks.csv"

    if annotations is None:
        paths = sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if image_dir.exists() else []
        if not paths:
            raise DatasetError(f"No images found under {image_dir}")
        entries = [dict(path=p, points=None) for p in paths]
        logger.info("Loaded %d unannotated images from %s", len(entries), image_dir)
        return FolderDataset(entries, eye_indices)

    annotations = Path(annotations)
    if not annotations.exists():
        raise MissingArtifactError(f"Annotation file not found: {annotations}")
    entries = []
    for row in _parse_annotations(annotations, eye_indices):
        path = image_dir / row["file"]
        if not path.exists():
            raise DatasetError(f"{annotations}:{row['line']}: image file not found: {row['file']}")
        entries.append(dict(path=path, points=row["points"], visible=row["visible"], identity=row["identity"]))
    logger.info("Loaded %d annotated images from %s", len(entries), root)
    return FolderDataset(entries, eye_indices)


def write_dataset(samples: Sequence[ImageSample], root, pairs: Optional[List[Tuple[int, int, bool]]] = None) -> Path:
    """Materialize samples in the standard layout (images, landmarks.csv, pairs.txt)."""
    root = Path(root)
    image_dir = root / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    k = len(samples[0].landmarks) if samples and samples[0].landmarks is not None else 0
    names = []
    with open(root / "landmarks.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["file"] + [f"{axis}{i}" for i in range(k) for axis in ("x", "y")] + ["identity"])
        for index, sample in enumerate(samples):
            name = f"{index:05d}.png"
            names.append(name)
            pixels = np.clip(np.round(sample.image * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(pixels).save(image_dir / name)
            coords = []
            if sample.landmarks is not None:
                for (x, y), visible in zip(sample.landmarks.points, sample.landmarks.visible):
                    coords += [f"{x:.4f}", f"{y:.4f}"] if visible else ["", ""]
            writer.writerow([name] + coords + [sample.identity_id])
    if pairs is not None:
        with open(root / "pairs.txt", "w") as f:
            for ref, query, same in pairs:
                f.write(f"{names[ref]} {names[query]} {'same' if same else 'diff'}\n")
    return root


def read_pairs_file(path, dataset: FolderDataset) -> List[Tuple[ImageSample, ImageSample, bool]]:
    path = Path(path)
    index = {Path(entry["path"]).name: i for i, entry in enumerate(dataset.entries)}
    pairs = []
    with open(path) as f:
        for line_number, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[2] not in ("same", "diff"):
                raise DatasetError(f"{path}:{line_number}: expected 'ref query same|diff'")
            for name in parts[:2]:
                if name not in index:
                    raise DatasetError(f"{path}:{line_number}: unknown image {name}")
            pairs.append((dataset[index[parts[0]]], dataset[index[parts[1]]], parts[2] == "same"))
    return pairs


def build_matching_pairs(
    samples: Sequence[ImageSample],
    n_same: int,
    n_diff: int,
    rng: np.random.Generator,
    return_indices: bool = False,
):
    """
    Exactly n_same pairs sharing an identity and n_diff pairs with distinct
    identities, drawn from annotated samples. A sample without an identity
    label (identity_id < 0) is its own identity.
    """
    annotated = [i for i, s in enumerate(samples) if s.landmarks is not None]
    by_identity: Dict[int, List[int]] = defaultdict(list)
    for i in annotated:
        identity = samples[i].identity_id
        by_identity[identity if identity >= 0 else -(i + 1)].append(i)
    repeated = [ident for ident, members in by_identity.items() if len(members) >= 2]
    identities = sorted(by_identity)

    if n_same > 0 and not repeated:
        raise DatasetError(f"{n_same} same-identity pairs need an identity with >= 2 annotated samples; none found")
    if n_diff > 0 and len(identities) < 2:
        raise DatasetError(f"{n_diff} different-identity pairs need >= 2 identities; found {len(identities)}")

    pairs: List[Tuple[int, int, bool]] = []
    repeated.sort()
    for _ in range(n_same):
        members = by_identity[repeated[int(rng.integers(len(repeated)))]]
        ref, query = rng.choice(len(members), size=2, replace=False)
        pairs.append((members[ref], members[query], True))
    for _ in range(n_diff):
        a, b = rng.choice(len(identities), size=2, replace=False)
        group_a, group_b = by_identity[identities[a]], by_identity[identities[b]]
        pairs.append((group_a[int(rng.integers(len(group_a)))], group_b[int(rng.integers(len(group_b)))], False))

    if return_indices:
        return pairs
    return [(samples[ref], samples[query], same) for ref, query, same in pairs]


def split_samples(samples: Sequence[ImageSample], val_fraction: float, seed: int) -> Tuple[list, list]:
    """Deterministic train/val split of annotated samples."""
    order = np.random.default_rng(seed).permutation(len(samples))
    n_val = int(round(len(samples) * val_fraction))
    val = [samples[i] for i in sorted(order[:n_val])]
    train = [samples[i] for i in sorted(order[n_val:])]
    return train, val
