"""Exceptions shared across the package."""


class KmeFlowError(Exception):
    """Base class for all kmeflow errors."""


class DegenerateEnsembleError(KmeFlowError, ValueError):
    """Operation needs at least two particles (covariance divides by N-1)."""


class LikelihoodEvaluationError(KmeFlowError):
    """Negative log-likelihood returned a non-finite value for some particle."""

    def __init__(self, indices, message=None):
        self.indices = list(indices)
        super().__init__(
            message or f"non-finite log-likelihood at particle indices {self.indices}"
        )


class DivergenceError(KmeFlowError):
    """Particle flow produced non-finite positions or an excessive speed."""

    def __init__(self, message, step=None, max_alpha=None):
        self.step = step
        self.max_alpha = max_alpha
        super().__init__(message)


class NumericsError(KmeFlowError):
    """A linear solve or quadrature failed to reach the required accuracy."""


class ConfigError(KmeFlowError, ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class ScenarioFailureError(KmeFlowError):
    """An assimilation replicate exhausted its divergence retries."""

    def __init__(self, message, retries=0):
        self.retries = retries
        super().__init__(message)
