"""Exception hierarchy shared by all pipeline stages."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class InputError(PipelineError):
    """Bad input data, configuration, or arguments (CLI exit code 2)."""


class GeometryError(InputError):
    """Degenerate or invalid geometry (zero-area polygon, collinear vertices)."""


class DegenerateDataError(PipelineError):
    """Input is well-formed but too degenerate to analyze (CLI exit code 3)."""
