"""Exception hierarchy shared by every stage of the calibration pipeline."""


class CalibrationError(Exception):
    """Base class; ``stage`` is filled in by the CLI when surfacing errors."""

    stage = "calibration"


class NonUnitDQ(CalibrationError, ValueError):
    stage = "dq_core"


class OutOfRange(CalibrationError, ValueError):
    stage = "interp"

    def __init__(self, t, span):
        super().__init__(f"t={t:.9f} outside trajectory span [{span[0]:.9f}, {span[1]:.9f}]")
        self.t = t
        self.span = span


class NoOverlap(CalibrationError, ValueError):
    stage = "interp"


class TooFewPoints(CalibrationError, ValueError):
    stage = "align_init"


class DegenerateGeometry(CalibrationError, ValueError):
    stage = "align_init"


class InsufficientMotion(CalibrationError, ValueError):
    stage = "handeye"


class NumericalFailure(CalibrationError, ArithmeticError):
    stage = "handeye"


class GridMismatch(CalibrationError, ValueError):
    stage = "metrics"


class InvalidSpec(CalibrationError, ValueError):
    stage = "synth"


class NoForwardMotion(CalibrationError, ValueError):
    stage = "verify"


class NoOverlapWindow(CalibrationError, ValueError):
    stage = "verify"


class ParseError(CalibrationError, ValueError):
    stage = "io"

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class ConfigError(CalibrationError, ValueError):
    stage = "config"


class OutputError(CalibrationError, OSError):
    stage = "io"
