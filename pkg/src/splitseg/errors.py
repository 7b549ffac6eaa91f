"""Exception types shared across the package."""


class SplitSegError(Exception):
    """Base class for all errors raised by splitseg."""


class InvalidField(SplitSegError):
    """Field data violates a type invariant (non-finite values, bad shape)."""


class InvalidLabel(SplitSegError):
    """Label value outside [0, num_classes)."""


class ShapeMismatch(SplitSegError):
    """Two fields that must share dims/spacing do not."""


class GridTooSmall(SplitSegError):
    """Grid too small for the requested stencil."""


class GridTooLarge(SplitSegError):
    """Grid exceeds the guard limit of a brute-force routine."""


class EmptySource(SplitSegError):
    """Distance transform requested from an empty source set."""


class InvalidConfig(SplitSegError):
    """Configuration value violates its contract."""


class EmptySample(SplitSegError):
    """Statistic requested over an empty sample."""


class InsufficientData(SplitSegError):
    """Too few usable observations for the requested test."""


class DegenerateSpec(SplitSegError):
    """Phantom spec produces an empty label class."""


class DegenerateShift(SplitSegError):
    """Boundary shift empties one of the split classes."""


class MissingMask(SplitSegError):
    """Feature config requires a mask channel but none was supplied."""


class TrainingDiverged(SplitSegError):
    """Non-finite loss encountered during optimization."""


class FormatError(SplitSegError):
    """Malformed or truncated file."""


class Unsupported(SplitSegError):
    """File is well-formed but uses a feature outside the supported subset."""
