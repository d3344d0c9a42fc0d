"""Exception types raised by retdict."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class ConfigurationError(ValueError):
    """An invalid hyperparameter or layer configuration."""


class DegenerateError(ValueError):
    """A zero-norm vector where a direction is required."""


class DegenerateAtomError(DegenerateError):
    """A dictionary atom has (near) zero L2 norm."""

    def __init__(self, index, norm):
        self.index = index
        self.norm = norm
        super().__init__(f"atom {index} has degenerate norm {norm:.3e}")


class NumericError(FloatingPointError):
    """A non-finite value appeared in a computation."""


class StaleCacheError(RuntimeError):
    """Backward was called with parameters that changed since forward."""


class FormatError(ValueError):
    """A binary file does not match its declared layout."""
