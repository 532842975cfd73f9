"""Exception hierarchy shared by every module.

The CLI maps each class to a stable ``error`` string in its JSON error report,
so the class names are part of the external interface.
"""


class CadcError(Exception):
    """Base class for all simulator errors."""


class ShapeError(CadcError, ValueError):
    pass


class RangeError(CadcError, ValueError):
    """A value does not fit the declared code range or bit width."""


class CorruptBlockError(CadcError, ValueError):
    """A compressed psum block or stream failed structural validation."""


class AccumulatorOverflowError(CadcError, ArithmeticError):
    """Checked accumulator overflow (never silently wraps)."""


class NonFiniteError(CadcError, ArithmeticError):
    pass


class DivergenceError(CadcError, ArithmeticError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss


class ConfigError(CadcError, ValueError):
    pass


class FormatError(CadcError, ValueError):
    """Malformed binary tensor file."""
