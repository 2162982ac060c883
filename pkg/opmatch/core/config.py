"""
Configuration models
====================

Every section of a run configuration is a pydantic model that rejects
unknown keys, so a misspelt option fails before any computation starts.
The same models are the defaults of the library API.

A run configuration is a TOML document::

    seed = 7
    output_dir = "runs/gauss7"

    [corpus]
    image_size = 64
    [corpus.degradation]
    variant = "uniform"
    [corpus.degradation.kernel]
    kind = "gaussian"
    sigma = 1.0

    [match]
    total_op_steps = 1500
    [match.reg_weights]
    center = 1.0
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


def _odd(value: int, name: str) -> int:
    if value % 2 == 0:
        raise ValueError(f"{name} must be odd, got {value}")
    return value


# ----------------------------------------------------------------------
# flow
# ----------------------------------------------------------------------
class ArchConfig(StrictModel):
    """Velocity network architecture."""

    channels: int = Field(1, ge=1)
    cond_channels: int = Field(0, ge=0)
    hidden: int = Field(32, ge=4)
    depth: int = Field(4, ge=3, le=5)
    kernel_size: int = Field(3, ge=1)
    time_embed_dim: int = Field(32, ge=2)
    init_scale: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "ArchConfig":
        _odd(self.kernel_size, "kernel_size")
        if self.time_embed_dim % 2:
            raise ValueError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        return self


class PriorConfig(StrictModel):
    """Step 1: teacher training on corrupted patches."""

    arch: ArchConfig = Field(default_factory=ArchConfig)
    epochs: int = Field(10, ge=1)
    max_steps: Optional[int] = Field(None, ge=1)
    batch: int = Field(32, ge=1)
    lr: float = Field(1e-3, gt=0)
    warmup_steps: int = Field(0, ge=0)
    ema_decay: float = Field(0.999, ge=0, le=1)
    coord_dropout: float = Field(0.2, ge=0, le=1)
    t_clamp: float = Field(1e-3, gt=0, lt=0.5)
    dtype: Literal["float32", "float64"] = "float32"
    log_every: int = Field(100, ge=1)
    progress: bool = False


# ----------------------------------------------------------------------
# operators
# ----------------------------------------------------------------------
class KernelSpec(StrictModel):
    """Recipe for an explicit blur kernel."""

    kind: Literal["dirac", "gaussian", "anisotropic_gaussian", "box", "motion", "file"] = "gaussian"
    size: int = Field(7, ge=1)
    sigma: float = Field(1.0, gt=0)
    sigma_x: float = Field(1.5, gt=0)
    sigma_y: float = Field(0.8, gt=0)
    theta: float = 0.0
    steps: int = Field(12, ge=0)
    shift: Tuple[int, int] = (0, 0)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "KernelSpec":
        _odd(self.size, "kernel size")
        if self.kind == "file" and not self.path:
            raise ValueError("kernel kind 'file' needs a path")
        return self


class OperatorConfig(StrictModel):
    """Description of a forward operator (true degradation or learnable init)."""

    variant: Literal["uniform", "grid", "linear_net", "downscale"] = "uniform"
    channels: int = Field(1, ge=1)
    kernel: KernelSpec = Field(default_factory=lambda: KernelSpec(kind="dirac"))
    grid_shape: Tuple[int, int] = (4, 4)
    grid_kernels: Literal["same", "anisotropic_field"] = "same"
    blend: Literal["pixel", "patch"] = "pixel"
    scale: int = Field(2, ge=1)
    inner: Literal["uniform", "linear_net"] = "uniform"
    net_channels: int = Field(64, ge=1)
    net_init_noise: float = Field(1e-3, ge=0)
    noise_sigma: float = Field(0.0, ge=0)
    trainable_noise: bool = False
    normalization: Literal["hard_sum_to_one", "soft_penalty", "none"] = "hard_sum_to_one"


# ----------------------------------------------------------------------
# distmatch
# ----------------------------------------------------------------------
class RegWeights(StrictModel):
    center: float = Field(0.0, ge=0)
    sparsity: float = Field(0.0, ge=0)
    gaussian: float = Field(0.0, ge=0)
    sum_to_one: float = Field(0.0, ge=0)


class MatchConfig(StrictModel):
    """Step 2: alternating auxiliary/operator updates."""

    lr_operator: float = Field(1e-3, gt=0)
    lr_aux: float = Field(1e-4, gt=0)
    batch: int = Field(32, ge=1)
    aux_steps_per_op_step: int = Field(1, ge=1)
    total_op_steps: int = Field(1000, ge=0)
    reg_weights: RegWeights = Field(default_factory=RegWeights)
    t_clamp: float = Field(1e-3, gt=0, lt=0.5)
    time_weight: Literal["velocity", "score"] = "velocity"
    seed: Optional[int] = None
    aux_warmup_steps: int = Field(0, ge=0)
    random_coords: bool = False
    init: OperatorConfig = Field(default_factory=OperatorConfig)
    snapshot_every: int = Field(100, ge=1)
    log_every: int = Field(50, ge=1)
    progress: bool = False


class SRConfig(StrictModel):
    """Super-resolution kernel learning on a single image."""

    image: Optional[str] = None
    scale: int = Field(2, ge=2)
    patch_size: int = Field(16, ge=4)
    stride: int = Field(2, ge=1)
    min_patches: int = Field(500, ge=1)
    inner: Literal["uniform", "linear_net"] = "linear_net"
    kernel_size: int = Field(13, ge=1)
    downscale: bool = True


# ----------------------------------------------------------------------
# restore
# ----------------------------------------------------------------------
class RestoreConfig(StrictModel):
    solver: Literal["wiener", "map_tv"] = "map_tv"
    tv_weight: float = Field(0.02, ge=0)
    iterations: int = Field(500, ge=0)
    step_size: float = Field(1.0, gt=0)
    tol: float = Field(1e-6, ge=0)
    noise_sigma: Optional[float] = Field(None, ge=0)
    tile: int = Field(64, ge=4)
    overlap: int = Field(16, ge=0)
    halo: int = Field(16, ge=0)
    operator: Literal["learned", "true", "dirac"] = "learned"

    @model_validator(mode="after")
    def _check(self) -> "RestoreConfig":
        if self.tile <= 2 * self.overlap:
            raise ValueError(f"tile ({self.tile}) must exceed 2*overlap ({2 * self.overlap})")
        return self


# ----------------------------------------------------------------------
# data
# ----------------------------------------------------------------------
class CorpusSpec(StrictModel):
    """One split of a synthetic corpus."""

    source: str = "synthetic:dead_leaves"
    source_ids: List[str] = Field(default_factory=list)
    image_size: int = Field(64, ge=4)
    channels: int = Field(1, ge=1)
    patch_size: int = Field(32, ge=2)
    stride: int = Field(16, ge=1)
    degradation: OperatorConfig = Field(default_factory=OperatorConfig)
    noise_sigma: float = Field(0.0, ge=0)
    split: Literal["clean", "corrupted", "test"] = "corrupted"
    seed: int = 0


class CorpusConfig(StrictModel):
    """The ``[corpus]`` section: sources partitioned into disjoint splits."""

    source: str = "synthetic:dead_leaves"
    n_images: int = Field(40, ge=3)
    image_size: int = Field(64, ge=4)
    channels: int = Field(1, ge=1)
    patch_size: int = Field(32, ge=2)
    stride: int = Field(8, ge=1)
    degradation: OperatorConfig = Field(
        default_factory=lambda: OperatorConfig(kernel=KernelSpec(kind="gaussian", sigma=1.0))
    )
    noise_sigma: float = Field(0.01, ge=0)
    clean_fraction: float = Field(0.4, gt=0, lt=1)
    test_fraction: float = Field(0.1, gt=0, lt=1)

    @model_validator(mode="after")
    def _check(self) -> "CorpusConfig":
        if self.clean_fraction + self.test_fraction >= 1:
            raise ValueError("clean_fraction + test_fraction must leave room for the corrupted split")
        if self.patch_size > self.image_size:
            raise ValueError("patch_size exceeds image_size")
        return self


# ----------------------------------------------------------------------
# metrics / oracle / sweep
# ----------------------------------------------------------------------
class MetricsConfig(StrictModel):
    peak: float = Field(1.0, gt=0)
    kernel_pad: int = Field(25, ge=1)
    ncc_max_shift: int = Field(5, ge=0)
    flip: bool = True


class OracleConfig(StrictModel):
    dims: List[int] = Field(default_factory=lambda: [1, 2, 4])
    amplitudes: List[float] = Field(default_factory=lambda: [0.5, 1.5])
    sigma: float = Field(0.1, gt=0)
    quadrature_points: int = Field(64, ge=2)
    t_clamp: float = Field(1e-3, gt=0, lt=0.5)
    gradient_samples: int = Field(400000, ge=100)
    gradient_batch: int = Field(50000, ge=100)
    gradient_fd_step: float = Field(1e-4, gt=0)
    gradient_tolerance: float = Field(0.02, gt=0)
    rotation_trials: int = Field(20, ge=1)
    moment_trials: int = Field(20, ge=1)
    moment_samples: int = Field(20000, ge=100)
    ring_size: int = Field(8, ge=3)
    ring_kernel: List[float] = Field(default_factory=lambda: [0.25, 0.5, 0.25])


class SweepConfig(StrictModel):
    noise_levels: List[float] = Field(default_factory=lambda: [0.0, 0.02, 0.04, 0.08])


class RunConfig(StrictModel):
    """Top-level document; ``seed`` is mandatory."""

    seed: int
    output_dir: str = "runs/default"
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    prior: PriorConfig = Field(default_factory=PriorConfig)
    match: MatchConfig = Field(default_factory=MatchConfig)
    restore: RestoreConfig = Field(default_factory=RestoreConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    sr: SRConfig = Field(default_factory=SRConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(document: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    data = dict(document)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {_format_validation_error(exc)}") from exc


def load_config(
    path: Optional[Union[str, Path]], overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """Read a TOML run configuration; ``overrides`` replace top-level keys."""
    document: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            document = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(document, overrides)


def config_hash(cfg: BaseModel) -> str:
    """sha256 of the canonical JSON form; the output location does not count."""
    document = cfg.model_dump(mode="json", exclude={"output_dir"})
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
