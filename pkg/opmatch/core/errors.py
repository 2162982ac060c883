"""
Exception hierarchy
===================

Every error raised deliberately by opmatch derives from ``OpmatchError``.
The ``exit_code`` attribute is what the CLI returns to the shell.
"""

from typing import Optional


class OpmatchError(Exception):
    """Base class for all opmatch failures."""

    exit_code = 1


class ConfigError(OpmatchError):
    """Invalid, unknown or missing configuration values."""

    exit_code = 2


class NumericalError(OpmatchError):
    """A loss or gradient became NaN or infinite."""

    exit_code = 3

    def __init__(self, message: str, snapshot: Optional[str] = None):
        super().__init__(message)
        self.snapshot = snapshot


class MissingPrerequisiteError(OpmatchError):
    """An artifact produced by an earlier pipeline step is absent."""

    exit_code = 4

    def __init__(self, message: str, required_step: Optional[str] = None):
        if required_step:
            message = f"{message} (run `opmatch {required_step}` first)"
        super().__init__(message)
        self.required_step = required_step


class ShapeError(OpmatchError, ValueError):
    """Tensor shapes are incompatible; the message names the dimension."""


class ImageFormatError(OpmatchError, ValueError):
    """Unsupported or truncated image file."""


class CorpusError(OpmatchError):
    """Dataset problems: empty sources, overlapping splits, images too small."""


class OracleCheckFailure(OpmatchError):
    """An analytic oracle contract did not hold."""


class TensorFormatError(OpmatchError, ValueError):
    """A binary tensor file or archive is malformed."""
