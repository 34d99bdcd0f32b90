"""Exception hierarchy shared across the pricing and learning modules."""


class NeuralvolError(Exception):
    """Base class for all package-specific errors."""


class DomainError(NeuralvolError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class BoundsViolation(NeuralvolError, ValueError):
    """A price violates its no-arbitrage bounds beyond numerical tolerance."""


class NumericalOverflow(NeuralvolError, ArithmeticError):
    """An intermediate quantity left the representable floating-point range."""


class ShapeMismatch(NeuralvolError, ValueError):
    """Array shapes are inconsistent with the model or operation."""


class EmptyInput(NeuralvolError, ValueError):
    """An operation that requires at least one element received none."""


class NonFiniteLoss(NeuralvolError, ArithmeticError):
    """Training loss became NaN or infinite (typically an exploding step size)."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class FormatError(NeuralvolError, ValueError):
    """A serialized artifact is malformed or has an unsupported version."""
