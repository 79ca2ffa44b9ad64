"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit statuses without a lookup table.
"""


class ReconGenError(Exception):
    exit_code = 1


class ConfigError(ReconGenError, ValueError):
    exit_code = 2


class ParseError(ConfigError):
    pass


class StructuralError(ReconGenError):
    """Weights and architecture description disagree."""

    exit_code = 2


class UpstreamMissingError(ReconGenError, FileNotFoundError):
    exit_code = 3


class NumericError(ReconGenError, ArithmeticError):
    exit_code = 4


class CalibrationError(ReconGenError, ValueError):
    exit_code = 4


class DegenerateRangeError(CalibrationError):
    def __init__(self, layer: str, lo: float, hi: float):
        self.layer = layer
        super().__init__(f"degenerate activation range [{lo}, {hi}] at layer {layer!r}")


class AlignmentError(ReconGenError, ValueError):
    pass


class InputError(ReconGenError, ValueError):
    exit_code = 2


class UnsupportedModelError(ReconGenError, TypeError):
    exit_code = 2


class IngestionError(ReconGenError, FileNotFoundError):
    exit_code = 3


class PretrainingFailure(ReconGenError):
    exit_code = 4

    def __init__(self, message: str, trajectory: list[float]):
        self.trajectory = list(trajectory)
        super().__init__(f"{message}; trajectory={[round(a, 4) for a in trajectory]}")
