"""
opmatch.core - errors, configuration and shared data structures.

``datatypes`` and ``session`` depend on the tensor layer and are imported
from their modules directly.
"""

from .config import (
    CorpusConfig,
    MatchConfig,
    OperatorConfig,
    RunConfig,
    config_hash,
    load_config,
    parse_config,
)
from .errors import (
    ConfigError,
    CorpusError,
    ImageFormatError,
    MissingPrerequisiteError,
    NumericalError,
    OpmatchError,
    OracleCheckFailure,
    ShapeError,
    TensorFormatError,
)

__all__ = [
    "OpmatchError",
    "ConfigError",
    "NumericalError",
    "MissingPrerequisiteError",
    "ShapeError",
    "ImageFormatError",
    "CorpusError",
    "OracleCheckFailure",
    "TensorFormatError",
    "RunConfig",
    "CorpusConfig",
    "MatchConfig",
    "OperatorConfig",
    "load_config",
    "parse_config",
    "config_hash",
]
