"""Exception types shared across the package.

Validation problems (bad shapes, bad configs, bad arguments) subclass
``ValueError``; failures discovered while running (corrupt files, NaNs,
missing data) subclass ``RuntimeError``.  The CLI maps the first family to
exit code 1 and the second to exit code 2.
"""


class ShapeError(ValueError):
    """Operand shapes or ranks do not conform."""


class LengthError(ValueError):
    """A sequence input is too short (e.g. conv input shorter than kernel)."""


class ConfigError(ValueError):
    """An encoder or training configuration violates its invariants."""


class SpecError(ValueError):
    """A distillation spec (layer set, lambda, reduction) is invalid."""


class ParameterError(ValueError):
    """A plain argument is out of its documented range."""


class IncompatibilityError(ValueError):
    """Teacher and student architectures cannot be combined."""


class DataError(RuntimeError):
    """The corpus cannot supply what was asked of it."""


class FormatError(RuntimeError):
    """A checkpoint file does not start with the expected magic."""


class IntegrityError(RuntimeError):
    """A checkpoint file is structurally damaged (bad offsets, truncation)."""


class VersionError(RuntimeError):
    """A checkpoint file declares an unsupported format version."""


class ProtocolError(RuntimeError):
    """An analysis was invoked on an artifact that cannot support it."""


class NumericsError(RuntimeError):
    """Training produced a non-finite value."""
