"""Exception hierarchy shared across the toolkit.

Three failure families map onto distinct CLI exit codes: configuration
problems (bad keys, invalid hyperparameters), data problems (malformed
files, infeasible targets), and numeric problems (non-finite values).
"""


class AvsrError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(AvsrError):
    """Invalid configuration: unknown keys, out-of-range values, bad modes."""

    exit_code = 2


class DataError(AvsrError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class NumericError(AvsrError):
    """Non-finite values or numerically invalid requests."""

    exit_code = 4


class ShapeError(NumericError):
    """Operand shapes incompatible with an op's contract."""


class InsufficientAudioError(DataError):
    """Waveform shorter than one analysis window."""


class GeometryError(DataError):
    """Spatial input too small to survive the front-end's stride pyramid."""


class InfeasibleAlignmentError(DataError):
    """No blank-augmented alignment path can produce the target."""


class PoisonedUpdateError(NumericError):
    """A gradient fed to the optimizer contains NaN or Inf."""


class VocabularyError(DataError):
    """Symbol outside the model or language-model vocabulary."""
