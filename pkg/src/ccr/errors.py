"""Exception hierarchy shared by every module.

Each error carries a short ``category`` tag that the command line prints
and maps to an exit code.
"""


class CCRError(Exception):
    category = "error"


class ShapeError(CCRError, ValueError):
    category = "shape-error"


class ParameterError(CCRError, ValueError):
    category = "parameter-error"


class InputError(CCRError, ValueError):
    category = "input-error"


class ConfigError(CCRError, ValueError):
    category = "config-error"


class DataError(CCRError, ValueError):
    category = "data-error"


class FormatError(CCRError, ValueError):
    category = "format-error"


class IntegrityError(FormatError):
    category = "integrity-error"


class ManifestError(FormatError):
    category = "manifest-error"


class GradCheckInvalid(CCRError, RuntimeError):
    category = "gradcheck-invalid"


class NumericFailure(CCRError, FloatingPointError):
    """Raised when a loss or gradient goes non-finite.

    ``params`` holds the last parameter state for which the loss was finite,
    ``log`` the training records collected up to the failure.
    """

    category = "numeric-failure"

    def __init__(self, message, params=None, log=None):
        super().__init__(message)
        self.params = params
        self.log = log
