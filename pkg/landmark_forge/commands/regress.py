import click

from landmark_forge.commands.options import pipeline_errors, run_options
from landmark_forge.services import extractor_service, landmark_service, run_service
from landmark_forge.services.evaluation_service import landmark_overlays, prepare_eval_samples
from landmark_forge.utils.hashing import path_hash, short_hash
from landmark_forge.utils.seeding import seed_everything

DEFAULT_CHECKPOINTS = {"dense": ("stage2", "dense.ckpt"), "hypercolumn": ("stage1", "encoder.ckpt")}


def resolve_checkpoint(cfg, kind: str, checkpoint):
    if checkpoint is not None:
        return run_service.require(checkpoint)
    return run_service.require(run_service.expected_artifact(cfg, *DEFAULT_CHECKPOINTS[kind]))


@click.command("regress")
@click.option("--data", "data_root", type=click.Path(file_okay=False), default=None)
@click.option("--extractor", type=click.Choice(["dense", "hypercolumn"]), default=None)
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None, help="Extractor checkpoint.")
@click.option("--n-annotations", type=int, default=None, help="Annotated training samples (default: all).")
@run_options
@pipeline_errors
def command(data_root, extractor, checkpoint, n_annotations, config_path, overrides, run_name):
    """Train the landmark regressor over a frozen extractor and report val IOD."""
    cfg = run_service.load_run_config(
        config_path,
        overrides,
        {"dataset.root": data_root, "eval.extractor": extractor, "eval.n_annotations": n_annotations, "run_name": run_name},
    )
    kind = cfg.eval.extractor
    checkpoint = resolve_checkpoint(cfg, kind, checkpoint)
    seed_everything(cfg.regressor.seed)
    out_dir = run_service.stage_dir(cfg, "regress")
    run_service.dump_config(cfg, out_dir)

    features = extractor_service.load_extractor(kind, checkpoint, cfg.augmentation)
    train, val = run_service.train_val(cfg, run_service.load_samples(cfg))
    train, val = prepare_eval_samples(train, cfg.augmentation), prepare_eval_samples(val, cfg.augmentation)
    result = landmark_service.train_regressor(
        features, train, val, cfg.eval.n_annotations, cfg.regressor, out_dir / "cache", out_dir / "metrics.csv"
    )
    saved = landmark_service.save_regressor(result.regressor, out_dir / "regressor.ckpt", features.key)
    landmark_overlays(features, result.regressor, landmark_service.annotated(val), out_dir / "overlays", cfg.eval.overlay_pairs)

    sample = features(val[:1])
    n_heatmaps = cfg.regressor.n_virtual if cfg.regressor.wiring == "virtual" else result.regressor.n_landmarks
    flops = landmark_service.regressor_flops(features.channels, sample.spatial, n_heatmaps, result.regressor.n_landmarks)
    run_service.emit(
        dict(
            command="regress",
            extractor=kind,
            checkpoint_hash=short_hash(path_hash(checkpoint)),
            val_iod=result.val_iod,
            feature_dim=features.channels,
            regressor_macs=flops,
            regressor=saved,
        )
    )
