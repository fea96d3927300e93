"""Exception types raised across the package."""


class CollabError(Exception):
    """Base class for all package errors."""


class DimensionError(CollabError, ValueError):
    """Operands have incompatible shapes."""


class EmptyComplement(CollabError):
    """The view observes every feature, so there is no unobserved block."""


class SingularBlock(CollabError, ValueError):
    """A block that must be positive definite is singular or ill-conditioned."""


class UnidentifiableModel(CollabError, ValueError):
    """The aggregated normal matrix is singular; the views do not identify theta."""

    def __init__(self, message, agents=None):
        super().__init__(message)
        self.agents = list(agents) if agents is not None else []


class ZeroRiskError(CollabError, ValueError):
    """An agent reported zero residual risk, so its Gaussian weight is undefined."""

    def __init__(self, message, agents=None):
        super().__init__(message)
        self.agents = list(agents) if agents is not None else []


class RowRejected(CollabError, ValueError):
    """A tabular row could not be parsed under its schema."""

    def __init__(self, message, row_index):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index


class DivergedError(CollabError, RuntimeError):
    """Gradient descent made the loss increase for too many consecutive steps."""


class ConfigError(CollabError, ValueError):
    """An experiment configuration is malformed."""
