"""Experiment configuration: a versioned YAML key-tree validated with pydantic."""

import hashlib
import json
from typing import List, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

__all__ = [
    "SCHEMA_VERSION",
    "METHODS",
    "ConfigError",
    "PhantomSection",
    "CellSection",
    "TrainingSection",
    "RedSection",
    "SolverSection",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "config_digest",
]

SCHEMA_VERSION = 1
METHODS = ("ZF", "CS-TV", "RED-denoiser", "RARE-A2A")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PhantomSection(_Section):
    size: int = Field(64, ge=8)
    n_phases: int = Field(10, ge=1)
    supersample: int = Field(4, ge=1)
    texture: float = Field(0.0, ge=0.0, lt=1.0)


class CellSection(_Section):
    rate: float = Field(gt=0.0, le=1.0)
    snr_db: Optional[float] = None


class TrainingSection(_Section):
    """Artifact2Artifact data and optimiser settings."""

    n_objects: int = Field(4, ge=1)
    n_acquisitions: int = Field(4, ge=2)
    rate: float = Field(0.4, gt=0.0, le=1.0)
    snr_db: Optional[float] = 30.0
    pairing: str = "all"
    depth: int = Field(5, ge=1)
    width: int = Field(16, ge=1)
    kernel_size: int = Field(3, ge=1)
    alpha: float = Field(0.0, ge=0.0, le=1.0)
    learning_rate: float = Field(5e-3, gt=0.0)
    batch_size: int = Field(4, ge=1)
    epochs: int = Field(15, ge=1)
    patch_size: Optional[Tuple[int, int, int]] = (10, 32, 32)
    init: str = "identity"

    @field_validator("pairing")
    @classmethod
    def _pairing(cls, v):
        if v not in ("all", "adjacent"):
            raise ValueError("pairing must be 'all' or 'adjacent'")
        return v

    @field_validator("init")
    @classmethod
    def _init(cls, v):
        if v not in ("identity", "glorot"):
            raise ValueError("init must be 'identity' or 'glorot'")
        return v


class RedSection(_Section):
    """AWGN denoisers for the RED baseline; ``sigmas`` in image intensity units."""

    sigmas: List[float] = [1 / 255, 3 / 255, 5 / 255, 10 / 255]
    n_objects: int = Field(4, ge=1)
    copies: int = Field(3, ge=1)
    epochs: int = Field(10, ge=1)

    @field_validator("sigmas")
    @classmethod
    def _sigmas(cls, v):
        if not v or min(v) <= 0:
            raise ValueError("sigmas must be a non-empty list of positive numbers")
        return v


class SolverSection(_Section):
    tau_grid: List[float] = [0.3, 1.0, 3.0]
    lam_grid: List[float] = [0.01, 0.03, 0.1]
    rare_iters: int = Field(40, ge=1)
    tv_iters: int = Field(60, ge=1)
    tv_inner: int = Field(20, ge=1)
    beta: float = Field(0.5, gt=0.0, lt=1.0)
    rho: float = Field(1e-6, gt=0.0)
    real_projection: bool = True

    @field_validator("tau_grid", "lam_grid")
    @classmethod
    def _grid(cls, v):
        if not v or min(v) <= 0:
            raise ValueError("grids must be non-empty lists of positive numbers")
        return v


class ExperimentConfig(_Section):
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    out: str = "runs/study"
    phantom: PhantomSection = PhantomSection()
    readout_factor: int = Field(2, ge=1)
    n_test_objects: int = Field(1, ge=1)
    cells: List[CellSection] = [
        CellSection(rate=r, snr_db=s) for r in (0.10, 0.15, 0.20) for s in (30.0, 40.0)
    ]
    methods: List[str] = list(METHODS)
    training: TrainingSection = TrainingSection()
    red: RedSection = RedSection()
    solver: SolverSection = SolverSection()
    residual_factor: float = Field(10.0, gt=0.0)

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {v} (expected {SCHEMA_VERSION})")
        return v

    @field_validator("methods")
    @classmethod
    def _methods(cls, v):
        if not v:
            raise ValueError("method list must not be empty")
        bad = [m for m in v if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        return list(dict.fromkeys(v))

    @model_validator(mode="after")
    def _cells(self):
        if not self.cells:
            raise ValueError("at least one (rate, snr) cell is required")
        return self

    @property
    def readout(self):
        return self.readout_factor * self.phantom.size

    def digest(self):
        return config_digest(self)

    def with_overrides(self, **changes):
        """Validated copy with top-level fields replaced."""
        data = self.model_dump()
        data.update({k: v for k, v in changes.items() if v is not None})
        return parse_config(data)


def config_digest(cfg):
    payload = json.dumps(cfg.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _raise_config_error(exc):
    err = exc.errors()[0]
    field = ".".join(str(p) for p in err["loc"]) or None
    raise ConfigError(f"{field}: {err['msg']}" if field else err["msg"], field) from None


def parse_config(data):
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as exc:
        _raise_config_error(exc)


def load_config(path=None):
    """Read a YAML config; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return parse_config(data)
