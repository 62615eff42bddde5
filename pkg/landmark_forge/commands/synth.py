from pathlib import Path

import click
import numpy as np

from landmark_forge.commands.options import pipeline_errors, run_options
from landmark_forge.services import run_service
from landmark_forge.services.dataset_service import build_matching_pairs, write_dataset
from landmark_forge.services.errors import ConfigError
from landmark_forge.services.synthetic_service import generate_synthetic_dataset


@click.command("synth")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Dataset directory to write.")
@click.option("--count", type=int, default=None, help="Number of images.")
@click.option("--identities", type=int, default=None, help="Number of distinct identities.")
@click.option("--canvas", type=int, default=None, help="Image side in pixels.")
@click.option("--seed", type=int, default=None)
@run_options
@pipeline_errors
def command(out_dir, count, identities, canvas, seed, config_path, overrides, run_name):
    """Materialize a synthetic face dataset (images, landmarks.csv, pairs.txt)."""
    cfg = run_service.load_run_config(
        config_path,
        overrides,
        {
            "dataset.synthetic_count": count,
            "dataset.synthetic_identities": identities,
            "dataset.canvas": canvas,
            "seed": seed,
            "run_name": run_name,
        },
    )
    data = cfg.dataset
    if data.synthetic_count < 1:
        raise ConfigError(f"count must be >= 1, got {data.synthetic_count}")
    if data.synthetic_identities < 1:
        raise ConfigError(f"identities must be >= 1, got {data.synthetic_identities}")
    samples = generate_synthetic_dataset(data.synthetic_count, data.synthetic_identities, data.canvas, cfg.seed)
    pairs = None
    if data.synthetic_identities >= 2 and data.synthetic_count > data.synthetic_identities:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
        pairs = build_matching_pairs(samples, data.n_same_pairs, data.n_diff_pairs, rng, return_indices=True)
    root = write_dataset(samples, Path(out_dir), pairs)
    run_service.emit(dict(command="synth", root=root, images=len(samples), pairs=len(pairs or [])))
