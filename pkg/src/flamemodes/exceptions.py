"""Exception hierarchy.

Every error raised on purpose by this package derives from
:class:`FlameModesError` and carries a ``category`` used by the CLI to pick an
exit code and a short label for the message.
"""


class FlameModesError(Exception):
    category = "error"
    exit_code = 1


class InputError(FlameModesError, ValueError):
    category = "input error"
    exit_code = 3


class DimensionError(InputError):
    category = "dimension error"


class NumericError(FlameModesError, ArithmeticError):
    category = "numeric error"
    exit_code = 4


class FormatError(InputError):
    category = "format error"


class DataError(InputError):
    category = "data error"


class DatasetNotFoundError(InputError, FileNotFoundError):
    category = "dataset not found"


class ConfigError(FlameModesError, ValueError):
    category = "configuration error"
    exit_code = 2


class HyperparameterMismatch(FormatError):
    category = "hyperparameter mismatch"


class TrainingError(NumericError):
    category = "training error"
