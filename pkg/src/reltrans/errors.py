"""Exception types raised across the package."""


class ReltransError(Exception):
    """Base class for all package errors."""


class ShapeError(ReltransError, ValueError):
    """Operand extents are incompatible."""


class DegenerateRowError(ReltransError, ValueError):
    """A softmax row has every entry masked out."""


class ContractError(ReltransError, ValueError):
    """A caller violated an operation's precondition."""


class GraphValidationError(ReltransError, ValueError):
    """A graph breaks one of its structural invariants."""


class FormatError(ReltransError, ValueError):
    """A serialized graph, dataset or checkpoint could not be decoded."""


class GeneratorError(ReltransError, ValueError):
    """A task generator was asked for something it cannot produce."""


class MetricDomainError(ReltransError, ValueError):
    """A metric was evaluated outside its domain (e.g. a zero label)."""


class TrainingDivergedError(ReltransError, RuntimeError):
    """The loss became non-finite during training."""

    def __init__(self, message, grad_norms=()):
        super().__init__(message)
        self.grad_norms = list(grad_norms)
