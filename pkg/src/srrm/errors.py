"""Exception hierarchy shared by every stage of the downscaling engine."""


class SRRMError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(SRRMError, ValueError):
    """Input outside the domain an operation is defined on."""


class ShapeError(DomainError):
    """Array or grid dimensions are inconsistent."""


class ParseError(SRRMError, ValueError):
    """Malformed text input.  ``line`` is 1-based, or None when not applicable."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(SRRMError, ArithmeticError):
    """Base class for failures of the numerical machinery."""


class DegenerateClusterError(NumericalError):
    """A cluster lost all of its soft mass."""

    def __init__(self, clusters):
        self.clusters = list(clusters)
        super().__init__(
            f"cluster(s) {self.clusters} have zero soft mass; "
            "the cluster count is too large or the run collapsed"
        )


class OptimizerDivergenceError(NumericalError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"clustering objective became non-finite at iteration {iteration}")


class IllConditionedError(NumericalError):
    """Kernel system could not be solved; a positive ridge weight is needed."""


class EmptyTrainingError(SRRMError, ValueError):
    """No training samples available for a model."""


class SelectionError(SRRMError):
    """Every candidate parameter combination failed during model selection."""

    def __init__(self, failures):
        self.failures = dict(failures)
        detail = "; ".join(f"{k}: {v}" for k, v in self.failures.items())
        super().__init__(f"all parameter candidates infeasible ({detail})")


class StageError(SRRMError):
    """Wraps an error raised inside a pipeline stage with the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class ConfigError(SRRMError, ValueError):
    """Invalid configuration file or option."""
