import functools

import click

from landmark_forge.services.errors import PipelineError, handle_pipeline_error


def run_options(func):
    """--config / --set / --run-name shared by every pipeline command."""

    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="YAML run config.")
    @click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE", help="Override a config key.")
    @click.option("--run-name", default=None, help="Run directory name under the run root.")
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        return func(*args, **kwargs)

    return wrapper


def pipeline_errors(func):
    """Translate pipeline exceptions into click exits with their exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except PipelineError as e:
            raise handle_pipeline_error(e)

    return wrapper
