import click

from landmark_forge.commands.options import pipeline_errors, run_options
from landmark_forge.services import encoder_service, run_service, stage2_service
from landmark_forge.utils.seeding import seed_everything

MONITOR_IMAGES = 16


@click.command("stage2")
@click.option("--data", "data_root", type=click.Path(file_okay=False), default=None, help="Dataset root (default: synthetic).")
@click.option("--stage1-ckpt", type=click.Path(dir_okay=False), default=None, help="Defaults to the run's stage1/encoder.ckpt.")
@click.option("--epochs", type=int, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--output-dim", type=int, default=None)
@run_options
@pipeline_errors
def command(data_root, stage1_ckpt, epochs, tau, output_dim, config_path, overrides, run_name):
    """Distill hypercolumn correspondences into a compact dense feature map."""
    cfg = run_service.load_run_config(
        config_path,
        overrides,
        {
            "dataset.root": data_root,
            "stage2.epochs": epochs,
            "stage2.tau": tau,
            "stage2.output_dim": output_dim,
            "run_name": run_name,
        },
    )
    checkpoint = run_service.require(stage1_ckpt or run_service.expected_artifact(cfg, "stage1", "encoder.ckpt"))
    seed_everything(cfg.stage2.seed)
    out_dir = run_service.stage_dir(cfg, "stage2")
    run_service.dump_config(cfg, out_dir)
    train, val = run_service.train_val(cfg, run_service.load_samples(cfg))
    monitor = (val or train)[:MONITOR_IMAGES]
    query, key = stage2_service.held_out_views(monitor, cfg.augmentation, seed=cfg.seed + 1)

    initial = stage2_service.build_dense_model(encoder_service.load_checkpoint(checkpoint), cfg.stage2, seed=cfg.stage2.seed)
    kl_before = stage2_service.distribution_kl(initial, query, key, cfg.stage2)
    agreement_before = stage2_service.correspondence_agreement(initial, query, key)

    result = stage2_service.train_stage2(train, checkpoint, cfg.stage2, cfg.augmentation, out_dir, cfg.workers)
    run_service.emit(
        dict(
            command="stage2",
            checkpoint=result.checkpoint,
            stage1_hash=result.stage1_hash[:12],
            kl_before=kl_before,
            kl_after=stage2_service.distribution_kl(result.model, query, key, cfg.stage2),
            agreement_before=agreement_before,
            agreement_after=stage2_service.correspondence_agreement(result.model, query, key),
        )
    )
