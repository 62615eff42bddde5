import click
import numpy as np

from landmark_forge.commands.options import pipeline_errors, run_options
from landmark_forge.commands.regress import resolve_checkpoint
from landmark_forge.schemas.evaluation import ProtocolSummary
from landmark_forge.services import evaluation_service, extractor_service, run_service
from landmark_forge.services.dataset_service import build_matching_pairs, load_dataset, read_pairs_file
from landmark_forge.utils.hashing import path_hash, short_hash
from landmark_forge.utils.seeding import seed_everything

PROTOCOLS = ["matching", "regression", "fewshot", "scale", "nmf", "pck"]


def _matching_pairs(cfg, samples):
    pairs_path = run_service.pairs_file(cfg)
    if pairs_path is not None:
        dataset = load_dataset(cfg.dataset.root, cfg.dataset.annotations, cfg.dataset.eye_indices)
        pairs = read_pairs_file(pairs_path, dataset)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
        pairs = build_matching_pairs(samples, cfg.dataset.n_same_pairs, cfg.dataset.n_diff_pairs, rng)
    prepare = evaluation_service.prepare_eval_samples
    return [(*prepare([ref, query], cfg.augmentation), same) for ref, query, same in pairs]


def run_protocol(cfg, features, protocol, out_dir):
    """Returns (metric name, value, details) and writes the protocol's reports into out_dir."""
    samples = run_service.load_samples(cfg)
    train, val = run_service.train_val(cfg, samples)
    train = evaluation_service.prepare_eval_samples(train, cfg.augmentation)
    val = evaluation_service.prepare_eval_samples(val, cfg.augmentation)
    ev = cfg.eval

    if protocol == "matching":
        pairs = _matching_pairs(cfg, samples)
        report = evaluation_service.eval_matching(features, pairs, ev.match_tau)
        evaluation_service.write_matching_csv(report, out_dir / "matching.csv")
        evaluation_service.matching_overlays(features, pairs, out_dir / "overlays", ev.overlay_pairs, ev.match_tau)
        return "same_identity_err", report.same_identity_err, dict(diff_identity_err=report.diff_identity_err)
    if protocol == "regression":
        value = evaluation_service.eval_regression(features, train, val, ev.n_annotations, cfg.regressor, out_dir / "cache")
        return "val_iod", value, {}
    if protocol == "pck":
        value = evaluation_service.eval_pck(
            features, train, val, ev.n_annotations, cfg.regressor, ev.pck_threshold, out_dir / "cache"
        )
        return "pck", value, {}
    if protocol == "fewshot":
        rows = evaluation_service.fewshot_sweep(
            features, train, val, ev.fewshot_counts, ev.seeds, cfg.regressor, out_dir / "cache"
        )
        evaluation_service.write_fewshot_csv(rows, out_dir / "fewshot.csv", features.name)
        return "mean_iod_at_max_count", rows[-1].mean_iod, {r.count: r.mean_iod for r in rows}
    if protocol == "scale":
        rows = evaluation_service.scale_sweep(features, train, val, ev.scale, cfg.regressor, ev.n_annotations)
        evaluation_service.write_scale_outputs(rows, out_dir, features.name)
        return "iod_at_max_zoom", rows[-1].iod, {str(r.zoom): r.iod for r in rows}
    if protocol == "nmf":
        parts = evaluation_service.nmf_discovery(
            features, val[:ev.nmf_images], ev.nmf_rank, ev.nmf_max_iter, ev.nmf_tol, cfg.seed, out_dir / "parts"
        )
        return "nmf_relative_error", parts.errors[-1], dict(updates=len(parts.errors) - 1)
    raise click.BadParameter(f"unknown protocol {protocol}")


@click.command("eval")
@click.option("--protocol", type=click.Choice(PROTOCOLS), default=None)
@click.option("--data", "data_root", type=click.Path(file_okay=False), default=None)
@click.option("--extractor", type=click.Choice(["dense", "hypercolumn"]), default=None)
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None, help="Extractor checkpoint.")
@click.option("--random-init", is_flag=True, help="Evaluate a randomly initialized extractor (baseline).")
@click.option("--nmf-reduce", type=int, default=None, metavar="RANK", help="Project features onto an NMF basis first.")
@run_options
@pipeline_errors
def command(protocol, data_root, extractor, checkpoint, random_init, nmf_reduce, config_path, overrides, run_name):
    """Run one evaluation protocol and write its reports under eval/<protocol>."""
    cfg = run_service.load_run_config(
        config_path,
        overrides,
        {"dataset.root": data_root, "eval.protocol": protocol, "eval.extractor": extractor, "run_name": run_name},
    )
    seed_everything(cfg.seed)
    kind = cfg.eval.extractor
    if random_init:
        features = extractor_service.random_extractor(kind, cfg.backbone, cfg.augmentation, cfg.stage2, seed=cfg.seed)
        checkpoint_hash = f"random{cfg.seed}"
    else:
        checkpoint = resolve_checkpoint(cfg, kind, checkpoint)
        features = extractor_service.load_extractor(kind, checkpoint, cfg.augmentation)
        checkpoint_hash = short_hash(path_hash(checkpoint))

    out_dir = run_service.stage_dir(cfg, f"eval/{cfg.eval.protocol}")
    run_service.dump_config(cfg, out_dir)
    if nmf_reduce is not None:
        fit = evaluation_service.prepare_eval_samples(run_service.load_samples(cfg)[:cfg.eval.nmf_images], cfg.augmentation)
        features = extractor_service.nmf_reduce_extractor(
            features, fit, nmf_reduce, cfg.eval.nmf_max_iter, cfg.eval.nmf_tol, cfg.seed
        )

    metric, value, details = run_protocol(cfg, features, cfg.eval.protocol, out_dir)
    summary = ProtocolSummary(protocol=cfg.eval.protocol, checkpoint_hash=checkpoint_hash, metric=metric, value=value)
    evaluation_service.write_summary(summary, out_dir / "summary.json")
    run_service.emit(dict(command="eval", extractor=features.name, **summary.model_dump(), **{str(k): v for k, v in details.items()}))
