"""
Evaluation Service - quantitative protocols over frozen extractors:
landmark matching, regression IOD, PCK, few-shot sweep, zoom-out scale
sweep and NMF part discovery. Writes CSV reports and a JSON summary.
Used by: eval command
"""

import csv
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from landmark_forge.schemas.dataset import AugmentationConfig
from landmark_forge.schemas.evaluation import (
    FewShotRow,
    MatchingReport,
    PairRecord,
    ProtocolSummary,
    ScaleRow,
    ScaleSweepConfig,
)
from landmark_forge.schemas.regressor import RegressorConfig
from landmark_forge.schemas.sample import ImageSample
from landmark_forge.services import nmf_service
from landmark_forge.services.augmentation_service import eval_view, pad_and_resize
from landmark_forge.services.errors import DatasetError
from landmark_forge.services.hypercolumn_service import landmark_cell, match_landmarks_from_maps, match_point
from landmark_forge.services.landmark_service import annotated, regress_landmarks, train_regressor
from landmark_forge.services.metrics_service import iod_error, mean_iod, pck
from landmark_forge.utils.plots import save_curve, save_heatmap_overlay, save_landmark_overlay, save_part_overlay

logger = logging.getLogger(__name__)


def prepare_eval_samples(samples: Sequence[ImageSample], aug_cfg: AugmentationConfig) -> List[ImageSample]:
    """Resize + central crop, landmarks carried along."""
    return [eval_view(sample, aug_cfg) for sample in samples]


def _label(sample: ImageSample, index: int) -> str:
    return sample.source_path or f"sample{index}"


def eval_matching(extractor, pairs: Sequence[Tuple[ImageSample, ImageSample, bool]], tau: float = 1.0) -> MatchingReport:
    """Match every reference landmark into its query; error in % of the query's IOD."""
    same, diff, records = [], [], []
    for index, (ref, query, same_identity) in enumerate(pairs):
        if ref.landmarks is None or query.landmarks is None:
            raise DatasetError(f"matching pair {index} is not annotated")
        features = extractor([ref, query])
        pred = match_landmarks_from_maps(ref.landmarks, features.select(0), features.select(1), tau)
        error = iod_error(pred, query.landmarks)
        (same if same_identity else diff).append(error)
        records.append(
            PairRecord(ref=_label(ref, 2 * index), query=_label(query, 2 * index + 1), same_identity=same_identity, error=error)
        )
    report = MatchingReport(
        same_identity_err=float(np.mean(same)) if same else float("nan"),
        diff_identity_err=float(np.mean(diff)) if diff else float("nan"),
        n_same=len(same),
        n_diff=len(diff),
        records=records,
    )
    logger.info("Matching: same %.2f%% (%d), diff %.2f%% (%d)", report.same_identity_err, len(same), report.diff_identity_err, len(diff))
    return report


def write_matching_csv(report: MatchingReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["ref", "query", "same_identity", "error"])
        for record in report.records:
            writer.writerow([record.ref, record.query, int(record.same_identity), f"{record.error:.6f}"])
        writer.writerow(["mean_same", "", 1, f"{report.same_identity_err:.6f}"])
        writer.writerow(["mean_diff", "", 0, f"{report.diff_identity_err:.6f}"])
    return path


def matching_overlays(extractor, pairs, out_dir, count: int, tau: float = 1.0) -> List[Path]:
    """Heatmap of the first reference landmark over each query, peak marked."""
    paths = []
    for index, (ref, query, _) in enumerate(pairs[:count]):
        features = extractor([ref, query])
        ref_map, query_map = features.select(0), features.select(1)
        cell = landmark_cell(ref.landmarks.points[0], ref_map.downscale, ref_map.spatial)
        distribution, xy = match_point(ref_map, cell, query_map, tau)
        paths.append(
            save_heatmap_overlay(Path(out_dir) / f"pair{index:03d}.png", query.image, distribution.mass.numpy(), xy)
        )
    return paths


def regression_predictions(extractor, regressor, samples: Sequence[ImageSample]):
    features = extractor(samples)
    eye_indices = samples[0].landmarks.eye_indices if samples[0].landmarks is not None else None
    return regress_landmarks(regressor, features, eye_indices)


def eval_regression(
    extractor,
    train: Sequence[ImageSample],
    val: Sequence[ImageSample],
    n_annotations: Optional[int],
    cfg: RegressorConfig,
    cache_dir=None,
) -> float:
    result = train_regressor(extractor, train, val, n_annotations, cfg, cache_dir)
    val = annotated(val)
    return mean_iod(regression_predictions(extractor, result.regressor, val), [s.landmarks for s in val])


def eval_pck(
    extractor,
    train: Sequence[ImageSample],
    val: Sequence[ImageSample],
    n_annotations: Optional[int],
    cfg: RegressorConfig,
    threshold_frac: float = 0.05,
    cache_dir=None,
) -> float:
    result = train_regressor(extractor, train, val, n_annotations, cfg, cache_dir)
    val = annotated(val)
    preds = regression_predictions(extractor, result.regressor, val)
    return pck(preds, [s.landmarks for s in val], val, threshold_frac)


def fewshot_sweep(
    extractor,
    train: Sequence[ImageSample],
    val: Sequence[ImageSample],
    counts: Sequence[int],
    seeds: Sequence[int],
    cfg: RegressorConfig,
    cache_dir=None,
) -> List[FewShotRow]:
    """Mean and sample std of val IOD over seeds for every annotation count."""
    rows = []
    for count in counts:
        scores = [
            train_regressor(extractor, train, val, count, cfg.model_copy(update=dict(seed=seed)), cache_dir).val_iod
            for seed in seeds
        ]
        single = len(scores) < 2
        rows.append(
            FewShotRow(
                count=count,
                mean_iod=float(np.mean(scores)),
                std_iod=0.0 if single else float(np.std(scores, ddof=1)),
                n_seeds=len(scores),
                single_seed=single,
            )
        )
        logger.info("Few-shot %d: %.2f +- %.2f", count, rows[-1].mean_iod, rows[-1].std_iod)
    return rows


def write_fewshot_csv(rows: Sequence[FewShotRow], path, method: str) -> Path:
    """One row per method, one column per annotation count, cells `mean +- std`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method"] + [str(row.count) for row in rows])
        writer.writerow([method] + [f"{row.mean_iod:.2f} +- {row.std_iod:.2f}" for row in rows])
    return path


def zoom_out(sample: ImageSample, factor: float, out_size: Optional[int] = None) -> ImageSample:
    """Enlarge the (square) crop window by `factor` around its center, edges replicated."""
    out_size = out_size or sample.height
    margin = int(round(sample.height * (factor - 1.0) / 2.0))
    if margin == 0 and out_size == sample.height:
        return sample
    return pad_and_resize(sample, margin, (0, 0), out_size)


def scale_sweep(
    extractor,
    train: Sequence[ImageSample],
    val: Sequence[ImageSample],
    cfg: ScaleSweepConfig,
    reg_cfg: RegressorConfig,
    n_annotations: Optional[int] = None,
) -> List[ScaleRow]:
    """Train on zoom-outs drawn from train_zoom_range, evaluate at every grid factor."""
    rng = np.random.default_rng(cfg.seed)
    low, high = cfg.train_zoom_range
    train = annotated(train)
    zoomed_train = [zoom_out(s, float(rng.uniform(low, high)) if high > low else low) for s in train]
    val = annotated(val)
    result = train_regressor(extractor, zoomed_train, val, n_annotations, reg_cfg)
    rows = []
    for factor in cfg.eval_zoom_grid:
        zoomed = [zoom_out(s, factor) for s in val]
        preds = regression_predictions(extractor, result.regressor, zoomed)
        rows.append(ScaleRow(zoom=factor, iod=mean_iod(preds, [s.landmarks for s in zoomed])))
        logger.info("Zoom %.2fx: IOD %.2f%%", factor, rows[-1].iod)
    return rows


def write_scale_outputs(rows: Sequence[ScaleRow], out_dir, label: str) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "scale.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["zoom", "iod"])
        for row in rows:
            writer.writerow([row.zoom, f"{row.iod:.6f}"])
    plot = save_curve(out_dir / "scale.png", [r.zoom for r in rows], {label: [r.iod for r in rows]}, "zoom-out factor", "IOD %")
    return csv_path, plot


def nmf_discovery(
    extractor, samples: Sequence[ImageSample], rank: int, max_iter: int, tol: float, seed: int, out_dir=None
) -> nmf_service.NmfParts:
    """Part heatmaps over the given images; colour-coded overlays when out_dir is set."""
    parts = nmf_service.nmf_parts(extractor(samples), rank, max_iter, tol, seed)
    if out_dir is not None:
        for index, sample in enumerate(samples):
            save_part_overlay(Path(out_dir) / f"parts{index:03d}.png", sample.image, parts.heat[index])
        with open(Path(out_dir) / "nmf_errors.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["update", "relative_error"])
            writer.writerows(enumerate(parts.errors))
    return parts


def landmark_overlays(extractor, regressor, samples: Sequence[ImageSample], out_dir, count: int) -> List[Path]:
    samples = list(samples[:count])
    preds = regression_predictions(extractor, regressor, samples)
    return [
        save_landmark_overlay(Path(out_dir) / f"landmarks{i:03d}.png", s.image, p.points, s.landmarks.points)
        for i, (s, p) in enumerate(zip(samples, preds))
    ]


def write_summary(summary: ProtocolSummary, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary.model_dump(), indent=2))
    return path
