"""Exception hierarchy shared by all seldgrid modules."""


class SeldGridError(Exception):
    """Base class; ``code`` is the machine-readable name used in CLI errors."""

    exit_code = 2

    @property
    def code(self) -> str:
        return type(self).__name__


class NonDivisibleGridSize(SeldGridError, ValueError):
    pass


class ElevationOutOfRange(SeldGridError, ValueError):
    pass


class IndexOutOfGrid(SeldGridError, IndexError):
    pass


class MalformedRow(SeldGridError, ValueError):
    pass


class ClassOutOfRange(SeldGridError, ValueError):
    pass


class FrameOutOfRange(SeldGridError, ValueError):
    pass


class ShapeMismatch(SeldGridError, ValueError):
    pass


class NonFiniteInput(SeldGridError, ValueError):
    pass


class ClassMapMismatch(SeldGridError, ValueError):
    pass


class EmptyReference(SeldGridError, ValueError):
    pass


class RangeViolation(SeldGridError, ValueError):
    pass


class TooShortInput(SeldGridError, ValueError):
    pass


class InfeasibleSpec(SeldGridError, ValueError):
    pass


class DivergenceDetected(SeldGridError, RuntimeError):
    exit_code = 1

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class ConfigInvalid(SeldGridError, ValueError):
    pass


class ContainerFormatError(SeldGridError, ValueError):
    pass


class UnsupportedSampleRate(SeldGridError, ValueError):
    pass
