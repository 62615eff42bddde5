import click

from landmark_forge.commands.options import pipeline_errors, run_options
from landmark_forge.services import encoder_service, run_service, stage1_service
from landmark_forge.utils.seeding import seed_everything


@click.command("stage1")
@click.option("--data", "data_root", type=click.Path(file_okay=False), default=None, help="Dataset root (default: synthetic).")
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--resume", is_flag=True, help="Continue from the run's stage1/encoder.ckpt.")
@run_options
@pipeline_errors
def command(data_root, epochs, batch_size, resume, config_path, overrides, run_name):
    """Instance-level self-supervised training with a momentum target."""
    cfg = run_service.load_run_config(
        config_path,
        overrides,
        {"dataset.root": data_root, "stage1.epochs": epochs, "stage1.batch_size": batch_size, "run_name": run_name},
    )
    seed_everything(cfg.stage1.seed)
    out_dir = run_service.stage_dir(cfg, "stage1")
    run_service.dump_config(cfg, out_dir)
    train, _ = run_service.train_val(cfg, run_service.load_samples(cfg))

    if resume:
        encoder = encoder_service.load_checkpoint(run_service.require(out_dir / "encoder.ckpt"))
    else:
        encoder = encoder_service.build_encoder(cfg.backbone, momentum=cfg.stage1.ema_base, seed=cfg.stage1.seed)
    result = stage1_service.train_stage1(train, encoder, cfg.stage1, cfg.augmentation, out_dir, cfg.workers)
    means = result.epoch_means()
    run_service.emit(
        dict(
            command="stage1",
            checkpoint=result.checkpoint,
            steps=int(result.encoder.step),
            first_epoch_loss=means[0] if means else None,
            final_epoch_loss=means[-1] if means else None,
        )
    )
