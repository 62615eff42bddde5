"""
Pipeline errors - shared exception hierarchy for every service.
Used by: all services, CLI commands (exit code translation)
"""

import click


class PipelineError(Exception):
    """Base exception for pipeline errors."""
    exit_code = 1


class ConfigError(PipelineError):
    """Raised when a run configuration is invalid."""
    exit_code = 2


class MissingArtifactError(PipelineError):
    """Raised when an upstream artifact (checkpoint, dataset) is absent."""
    exit_code = 3


class NumericalError(PipelineError):
    """Raised when a loss or metric becomes non-finite."""
    exit_code = 4


class DatasetError(PipelineError):
    """Raised when dataset files or annotations are malformed."""
    pass


class CheckpointError(PipelineError):
    """Raised when a checkpoint cannot be read into the requested model."""
    pass


class EncoderError(PipelineError, ValueError):
    """Raised when an input does not satisfy the backbone contract."""
    pass


class DegenerateEmbeddingError(NumericalError):
    """Raised when an embedding or feature vector has zero norm."""
    pass


class MetricError(PipelineError, ValueError):
    """Raised when a metric is undefined for its inputs."""
    pass


def handle_pipeline_error(e: Exception) -> click.ClickException:
    """
    Convert pipeline exceptions to click exceptions with the matching exit code.

    Usage:
        try:
            run_stage(...)
        except PipelineError as e:
            raise handle_pipeline_error(e)
    """
    exc = click.ClickException(f"{type(e).__name__}: {e}")
    exc.exit_code = getattr(e, "exit_code", 1)
    return exc
