"""YAML experiment configuration, validated with pydantic.

A minimal file may be empty; every field has a default (see
``DEFAULTS_TABLE`` or the README). Unknown keys are rejected. All
validation problems are collected and reported together.

Example::

    seed: 7
    horizon: 16384
    replications: 20
    environment:
      missingness: mar
      perturbation_scale: 0.3
    algorithms:
      - name: primo
        gamma: {mode: practical, c: 1.0, rho: 1.0}
      - name: primo-cal
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .elasticity import RADIUS_KINDS
from .function_classes import CONTEXT_LIFTS, REWARD_TERMS
from .runner import ALGORITHMS

__all__ = [
    "ConfigError",
    "EnvironmentConfig",
    "GammaConfig",
    "AlgorithmConfig",
    "ElasticityConfig",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "DEFAULTS_TABLE",
]


class ConfigError(Exception):
    """Raised with the full list of problems found in a configuration."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GroundTruthConfig(_Strict):
    covariate_range: float = Field(0.3, gt=0)
    slope: float = Field(1.3, ge=0)
    bump: float = Field(0.1, ge=0)
    context_effect: float = Field(0.1, ge=0)
    interaction: float = Field(0.03, ge=0)


class EnvironmentConfig(_Strict):
    d_x: int = Field(3, ge=1)
    n_actions: int = Field(4, ge=2)
    structure_seed: int = Field(0, ge=0)
    context_law: Literal["uniform", "gaussian"] = "uniform"
    x_max: float = Field(1.0, gt=0)
    context_std: float = Field(0.5, gt=0)
    tau: float = Field(0.0, ge=0, description="bound on the covariate noise eta")
    omega0: Optional[float] = Field(None, ge=0, description="scale of eta; defaults to tau / 3")
    lam: float = Field(0.5, ge=0, description="reward noise bound")
    eps0: float = Field(0.1, gt=0, le=1)
    delta0: float = Field(0.5, ge=0)
    perturbation_scale: float = Field(0.3, ge=0)
    perturbation_direction: Optional[list[float]] = None
    missingness: Literal["mcar", "mar", "mnar"] = "mar"
    mcar_p: float = Field(0.5, ge=0, le=1)
    mnar_threshold: Optional[float] = None
    mnar_flip_prob: float = Field(0.1, ge=0, le=1)
    reward_terms: list[str] = ["intercept", "z"]
    reward_norm_bound: float = Field(3.0, gt=0)
    covariate_lifts: list[str] = []
    propensity_lifts: list[str] = []
    propensity_range: Optional[tuple[float, float]] = None
    ground_truth: GroundTruthConfig = GroundTruthConfig()
    f_star: Optional[list[float]] = None
    g_star: Optional[list[float]] = None
    e_star: Optional[list[float]] = None

    @field_validator("reward_terms")
    @classmethod
    def _terms(cls, v):
        bad = [t for t in v if t not in REWARD_TERMS]
        if bad or not v:
            raise ValueError(f"reward terms must be a non-empty subset of {list(REWARD_TERMS)}")
        return v

    @field_validator("covariate_lifts", "propensity_lifts")
    @classmethod
    def _lifts(cls, v):
        bad = [t for t in v if t not in CONTEXT_LIFTS]
        if bad:
            raise ValueError(f"lifts must be a subset of {list(CONTEXT_LIFTS)}, got {bad}")
        return v

    def build_kwargs(self) -> dict:
        """Keyword arguments for :func:`primo.environment.build_environment`."""
        kw = self.model_dump(exclude={"tau", "omega0", "lam", "ground_truth"})
        kw["eta_bound"] = self.tau
        kw["eta_std"] = self.omega0
        kw["xi_bound"] = self.lam
        kw["ground_truth"] = self.ground_truth.model_dump()
        for key in ("reward_terms", "covariate_lifts", "propensity_lifts"):
            kw[key] = tuple(kw[key])
        if kw["propensity_range"] is not None:
            kw["propensity_range"] = tuple(kw["propensity_range"])
        return kw


class GammaConfig(_Strict):
    mode: Literal["practical", "theory"] = "practical"
    c: float = Field(1.0, gt=0)
    rho: float = Field(0.5, gt=0, le=1)
    delta: float = Field(0.1, gt=0, lt=1)
    reward_rate: str = "linear"
    reward_rate_param: Optional[float] = Field(None, gt=0, description="defaults to the reward map dimension")
    propensity_rate: str = "linear"
    cover_d: float = Field(1.0, gt=0)

    @field_validator("reward_rate", "propensity_rate")
    @classmethod
    def _kind(cls, v):
        if v not in RADIUS_KINDS:
            raise ValueError(f"unknown rate kind {v!r}; expected one of {list(RADIUS_KINDS)}")
        return v


class AlgorithmConfig(_Strict):
    name: str
    gamma: GammaConfig = GammaConfig()

    @field_validator("name")
    @classmethod
    def _name(cls, v):
        if v not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {v!r}; expected one of {list(ALGORITHMS)}")
        return v


class ElasticityConfig(_Strict):
    enabled: bool = True
    n_samples: int = Field(100_000, ge=1000)
    method: Literal["closed-form-eigen", "monte-carlo-sup"] = "closed-form-eigen"


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    horizon: int = Field(2**14, ge=2)
    replications: int = Field(20, ge=1)
    tail_fraction: float = Field(0.25, gt=0, le=1)
    out: Optional[str] = None
    radius_scale: float = Field(1.0, ge=0)
    environment: EnvironmentConfig = EnvironmentConfig()
    algorithms: list[AlgorithmConfig] = Field(
        default_factory=lambda: [AlgorithmConfig(name=a) for a in ("primo", "primo-cal", "oracle-covariate")]
    )
    elasticity: ElasticityConfig = ElasticityConfig()

    @model_validator(mode="after")
    def _unique(self):
        names = [a.name for a in self.algorithms]
        if not names:
            raise ValueError("algorithms must not be empty")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate algorithm names in {names}")
        return self

    def with_algorithms(self, names: list[str]) -> "ExperimentConfig":
        """Keep listed algorithms, adding unlisted ones with default settings."""
        known = {a.name: a for a in self.algorithms}
        raw = self.model_dump()
        raw["algorithms"] = [known[n].model_dump() if n in known else {"name": n} for n in names]
        return parse_config(raw)


def _format_error(err: dict) -> str:
    loc = ".".join(str(p) for p in err["loc"]) or "<root>"
    return f"{loc}: {err['msg']}"


def parse_config(raw) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"<root>: expected a mapping, got {type(raw).__name__}"])
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError([_format_error(e) for e in exc.errors()]) from None


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML config; raise ConfigError listing every problem."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark is not None else "unknown position"
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError([f"{path}: parse error at {where}: {problem}"]) from None
    return parse_config(raw)


def _defaults_rows(model: type[BaseModel], prefix: str = "") -> list[tuple[str, str]]:
    rows = []
    for name, field in model.model_fields.items():
        ann = field.annotation
        if isinstance(ann, type) and issubclass(ann, BaseModel):
            rows.extend(_defaults_rows(ann, f"{prefix}{name}."))
        elif field.default_factory is not None:
            rows.append((prefix + name, "see below"))
        else:
            rows.append((prefix + name, repr(field.default)))
    return rows


DEFAULTS_TABLE = _defaults_rows(ExperimentConfig) + [
    ("algorithms[].gamma." + k, v) for k, v in _defaults_rows(GammaConfig)
]
