import click

from landmark_forge.commands import evaluate, match_viz, regress, stage1, stage2, synth
from landmark_forge.config import settings
from landmark_forge.utils.log_setup import configure_logging


@click.group()
@click.option("--run-root", default=None, help="Overrides LANDMARK_FORGE_RUN_ROOT.")
@click.option("--log-level", default=None, help="Overrides LANDMARK_FORGE_LOG_LEVEL.")
@click.version_option("1.0.0", prog_name="landmark-forge")
def cli(run_root, log_level):
    """Self-supervised landmark pipeline: synth, stage1, stage2, regress, eval, match-viz."""
    if run_root is not None:
        settings.run_root = run_root
    configure_logging(log_level or settings.log_level)


cli.add_command(synth.command)
cli.add_command(stage1.command)
cli.add_command(stage2.command)
cli.add_command(regress.command)
cli.add_command(evaluate.command)
cli.add_command(match_viz.command)


if __name__ == "__main__":
    cli()
