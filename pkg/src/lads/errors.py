"""Exception hierarchy shared across the toolkit.

Every error raised by library code derives from LadsError so callers (and the
CLI exit-code mapping) can distinguish config, data, and numerical failures.
"""


class LadsError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(LadsError):
    """Invalid or inconsistent configuration (bad field, unknown key)."""


class FormatError(LadsError):
    """File container has a bad magic string or unsupported version."""


class ShapeError(LadsError):
    """Payload size or array shape does not match the declared header."""


class LabelError(LadsError):
    """A label index is outside its declared bounds."""


class ZeroVectorError(LadsError):
    """A vector with (near-)zero norm where a direction is required."""


class DimMismatchError(LadsError):
    """Embedding dimensionalities of two operands disagree."""


class UnknownDomainError(LadsError):
    """A referenced domain name/index is absent from the prompt bank."""


class DegenerateTextError(LadsError):
    """Two text prompts coincide, leaving no direction between them."""


class NonFiniteError(LadsError):
    """Training produced a NaN/Inf loss or parameter."""


class EmptyInputError(LadsError):
    """An operation received an empty sequence where data is required."""


class EmptyTestSetError(LadsError):
    """Nearest-neighbor scoring requires a nonempty reference set."""


class RangeError(LadsError):
    """A scalar argument lies outside its valid interval."""


class MissingDomainLabelsError(LadsError):
    """Evaluation needs per-row domain labels that the bundle lacks."""
