from pathlib import Path
from typing import Tuple

import click

from landmark_forge.commands.options import pipeline_errors, run_options
from landmark_forge.commands.regress import resolve_checkpoint
from landmark_forge.schemas.sample import ImageSample
from landmark_forge.services import extractor_service, run_service
from landmark_forge.services.augmentation_service import resize_tensor
from landmark_forge.services.dataset_service import read_image
from landmark_forge.services.errors import ConfigError, MissingArtifactError
from landmark_forge.services.hypercolumn_service import landmark_cell, match_point
from landmark_forge.utils.plots import save_heatmap_overlay


def _load(path, size: int) -> Tuple[ImageSample, ImageSample]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"Image not found: {path}")
    original = ImageSample(image=read_image(path), source_path=str(path))
    resized = resize_tensor(original, size).clamp(0.0, 1.0)
    return original, ImageSample(image=resized.permute(1, 2, 0).numpy(), source_path=str(path))


@click.command("match-viz")
@click.option("--ref", "ref_image", type=click.Path(dir_okay=False), required=True)
@click.option("--query", "query_image", type=click.Path(dir_okay=False), required=True)
@click.option("--point", type=(float, float), required=True, help="Source point (x y) in reference pixels.")
@click.option("--extractor", type=click.Choice(["dense", "hypercolumn"]), default=None)
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@run_options
@pipeline_errors
def command(ref_image, query_image, point, extractor, checkpoint, out_path, config_path, overrides, run_name):
    """Heatmap of one reference point's similarity over the query image."""
    cfg = run_service.load_run_config(config_path, overrides, {"eval.extractor": extractor, "run_name": run_name})
    kind = cfg.eval.extractor
    features = extractor_service.load_extractor(kind, resolve_checkpoint(cfg, kind, checkpoint), cfg.augmentation)
    size = cfg.augmentation.crop_size
    ref_original, ref = _load(ref_image, size)
    _, query = _load(query_image, size)

    x, y = point
    if not (0 <= x < ref_original.width and 0 <= y < ref_original.height):
        raise ConfigError(f"point ({x}, {y}) outside the {ref_original.width}x{ref_original.height} reference image")
    scaled = (x * size / ref_original.width, y * size / ref_original.height)

    maps = features([ref, query])
    ref_map, query_map = maps.select(0), maps.select(1)
    cell = landmark_cell(scaled, ref_map.downscale, ref_map.spatial)
    distribution, peak = match_point(ref_map, cell, query_map, cfg.eval.match_tau)
    out_path = Path(out_path) if out_path else run_service.stage_dir(cfg, "match_viz") / "heatmap.png"
    save_heatmap_overlay(out_path, query.image, distribution.mass.numpy(), peak)
    run_service.emit(dict(command="match-viz", out=out_path, source_cell=list(cell), peak=list(peak), entropy=distribution.entropy()))
