"""Exception types shared across the package."""


class SlideError(Exception):
    """Base class for all package-specific errors."""


class InputError(SlideError, ValueError):
    """A caller-supplied value violates an operation's preconditions."""


class InventoryError(SlideError, ValueError):
    """Unknown phoneme symbol or malformed phoneme inventory."""


class AlignmentError(SlideError, ValueError):
    """Malformed or inconsistent alignment data; message carries the line number
    for parse failures."""


class CheckpointError(SlideError, RuntimeError):
    """Checkpoint file is truncated, has a bad magic header, or does not match
    the expected model configuration."""


class TrainingError(SlideError, RuntimeError):
    """Training diverged (non-finite loss or gradient)."""


class DecodeError(SlideError, ValueError):
    """Unit token outside every phoneme's unit range."""


class TransportError(SlideError, RuntimeError):
    """External HTTP endpoint unreachable or returned a failure status."""


class FormatError(SlideError, ValueError):
    """External endpoint payload could not be parsed; carries the raw text."""


class SpecError(SlideError, ValueError):
    """Corpus generation spec is infeasible or inconsistent."""


class NumericError(SlideError, ArithmeticError):
    """A probability degenerated to zero (or similar numeric breakdown)."""
