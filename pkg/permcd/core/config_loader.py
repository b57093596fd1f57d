"""
Configuration Loader Module

Loads and validates experiment presets. Presets are flat ``key: value`` YAML
files under ``config/experiments``; every key can be overridden from the
command line.
"""

import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from permcd.core.errors import ConfigError
from permcd.core.types import EpsRule, MatrixFamily, OrderingKind, VerifySuite
from permcd.numerics.cd_engine import Ones, StdNormal, X0Spec
from permcd.numerics.matrices import (
    DSpec,
    Explicit,
    Linspace,
    SeededUniformInBand,
    SeededUniformRescaled,
    USpec,
)

logger = logging.getLogger(__name__)

SpecValue = Union[str, List[float]]
ModelT = TypeVar("ModelT", bound=BaseModel)


def _seeded(text: str, prefix: str) -> Optional[int]:
    head, sep, tail = text.partition(":")
    if head != prefix:
        return None
    if not sep:
        return 0
    try:
        return int(tail)
    except ValueError:
        raise ValueError(f"'{text}': seed after '{prefix}:' must be an integer")


def parse_d_spec(value: SpecValue) -> DSpec:
    """``linspace``, ``uniform:<seed>`` or an explicit list"""
    if isinstance(value, (list, tuple)):
        return Explicit(value)
    text = str(value).strip().lower()
    if text == "linspace":
        return Linspace()
    seed = _seeded(text, "uniform")
    if seed is not None:
        return SeededUniformRescaled(seed)
    raise ValueError(f"Unknown d_spec '{value}'. Expected linspace, uniform:<seed> or a list")


def parse_u_spec(value: SpecValue) -> USpec:
    """``band:<seed>`` or an explicit list"""
    if isinstance(value, (list, tuple)):
        return Explicit(value)
    seed = _seeded(str(value).strip().lower(), "band")
    if seed is not None:
        return SeededUniformInBand(seed)
    raise ValueError(f"Unknown u_spec '{value}'. Expected band:<seed> or a list")


def parse_x0_spec(value: SpecValue) -> X0Spec:
    """``normal``, ``normal:<seed>``, ``ones`` or an explicit list"""
    if isinstance(value, (list, tuple)):
        return Explicit(value)
    text = str(value).strip().lower()
    if text == "ones":
        return Ones()
    if text == "normal":
        return StdNormal()
    seed = _seeded(text, "normal")
    if seed is not None:
        return StdNormal(seed)
    raise ValueError(f"Unknown x0_spec '{value}'. Expected normal[:<seed>], ones or a list")


def _expand_seeds(data: Any) -> Any:
    """A seed count becomes the list seed_base .. seed_base + count - 1"""
    if isinstance(data, dict) and isinstance(data.get("seeds"), int):
        count = data["seeds"]
        if count < 1:
            raise ValueError(f"seeds must be a positive count or a list, got {count}")
        base = int(data.get("seed_base", 0))
        data = {**data, "seeds": list(range(base, base + count))}
    return data


def _default_workers() -> int:
    return int(os.getenv("PERMCD_WORKERS", "1"))


class ExperimentConfig(BaseModel):
    """Figure experiment: one matrix, several orderings, per-epoch traces"""
    model_config = ConfigDict(extra="forbid")

    name: str = "custom"
    matrix_family: MatrixFamily = MatrixFamily.PERTURBED_IDENTITY
    n: int = Field(100, ge=2)
    delta: float = Field(0.01, gt=0)
    eps: float = Field(0.0, ge=0)
    d_spec: SpecValue = "linspace"
    u_spec: SpecValue = "band:0"
    x0_spec: SpecValue = "normal"
    strategies: List[OrderingKind] = Field(
        default_factory=lambda: [OrderingKind.CYCLIC, OrderingKind.RANDOM_PERMUTATION,
                                 OrderingKind.UNIFORM_RANDOM])
    epochs: int = Field(100, ge=0)
    seed_base: int = Field(0, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0])
    stop_below: Optional[float] = Field(None, gt=0)
    twin: bool = False

    @model_validator(mode="before")
    @classmethod
    def _expand(cls, data):
        return _expand_seeds(data)

    @field_validator("d_spec")
    @classmethod
    def _valid_d_spec(cls, v):
        parse_d_spec(v)
        return v

    @field_validator("u_spec")
    @classmethod
    def _valid_u_spec(cls, v):
        parse_u_spec(v)
        return v

    @field_validator("x0_spec")
    @classmethod
    def _valid_x0_spec(cls, v):
        parse_x0_spec(v)
        return v

    @field_validator("strategies")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("at least one strategy is required")
        return v

    @model_validator(mode="after")
    def _delta_range(self):
        upper = 1.0 if self.matrix_family is MatrixFamily.SPIKED_EIGVEC else self.n / (self.n - 1)
        if not self.delta < upper:
            raise ValueError(f"delta must lie in (0, {upper:.6g}) for n={self.n}, got {self.delta}")
        if self.matrix_family is MatrixFamily.SPIKED_EIGVEC and self.eps <= 0:
            raise ValueError("spiked-eigvec experiments need eps > 0")
        if self.twin and self.matrix_family is not MatrixFamily.SPIKED_EIGVEC:
            raise ValueError("twin runs are only defined for the spiked-eigvec family")
        return self

    def parsed_d_spec(self) -> DSpec:
        return parse_d_spec(self.d_spec)

    def parsed_u_spec(self) -> USpec:
        return parse_u_spec(self.u_spec)

    def parsed_x0_spec(self) -> X0Spec:
        return parse_x0_spec(self.x0_spec)


class TableConfig(BaseModel):
    """Rate table over a grid of delta values"""
    model_config = ConfigDict(extra="forbid")

    name: str = "custom"
    n: int = Field(100, ge=5)
    deltas: List[float] = Field(default_factory=lambda: [1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
    eps_rule: EpsRule = EpsRule.EQUAL
    eps: Optional[float] = Field(None, ge=0)
    d_spec: SpecValue = "linspace"
    x0_spec: SpecValue = "normal"
    epochs: int = Field(2000, ge=1)
    stop_below: float = Field(1e-260, gt=0)
    window: int = Field(10, ge=1)
    seed_base: int = Field(0, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    rho_bar: float = Field(0.5, ge=0)
    include_weighted: bool = False
    workers: int = Field(default_factory=_default_workers, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _expand(cls, data):
        return _expand_seeds(data)

    @field_validator("deltas")
    @classmethod
    def _valid_deltas(cls, v):
        if not v:
            raise ValueError("deltas must not be empty")
        if any(not 0 < d < 1 for d in v):
            raise ValueError(f"every delta must lie in (0, 1), got {v}")
        return v

    @field_validator("d_spec")
    @classmethod
    def _valid_d_spec(cls, v):
        parse_d_spec(v)
        return v

    @field_validator("x0_spec")
    @classmethod
    def _valid_x0_spec(cls, v):
        parse_x0_spec(v)
        return v

    @model_validator(mode="after")
    def _fixed_needs_eps(self):
        if self.eps_rule is EpsRule.FIXED and self.eps is None:
            raise ValueError("eps_rule 'fixed' requires eps")
        return self

    def eps_for(self, delta: float) -> float:
        """eps paired with ``delta`` under the configured rule"""
        if self.eps_rule is EpsRule.EQUAL:
            return delta
        if self.eps_rule is EpsRule.SQRT_DELTA_OVER_10:
            return math.sqrt(delta / 10.0)
        return float(self.eps)

    def parsed_d_spec(self) -> DSpec:
        return parse_d_spec(self.d_spec)

    def parsed_x0_spec(self) -> X0Spec:
        return parse_x0_spec(self.x0_spec)


class VerifyConfig(BaseModel):
    """Parameters of the verification suites"""
    model_config = ConfigDict(extra="forbid")

    name: str = "verify"
    suites: List[VerifySuite] = Field(default_factory=lambda: list(VerifySuite))
    seed: int = 0
    identity_sizes: List[int] = Field(default_factory=lambda: [3, 4, 5, 6])
    lemma_n: int = Field(6, ge=3, le=7)
    lemma_eps: float = Field(0.05, gt=0)
    recurrence_n: int = Field(100, ge=5)
    recurrence_deltas: List[float] = Field(default_factory=lambda: [1e-3, 3e-3, 5e-3, 1e-2])
    recurrence_rho_bars: List[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0])
    recurrence_epochs: int = Field(500, ge=1)
    first_iter_n: int = Field(100, ge=3)
    first_iter_delta: float = Field(0.01, gt=0, lt=1)
    first_iter_draws: int = Field(1000, ge=1)
    scaling_n: int = Field(20, ge=2)
    scaling_instances: int = Field(20, ge=1)
    scaling_iterations: int = Field(100, ge=1)
    scaling_tol: float = Field(1e-9, gt=0)

    @field_validator("identity_sizes")
    @classmethod
    def _enumerable(cls, v):
        if any(not 2 <= k <= 8 for k in v):
            raise ValueError(f"identity sizes must lie in [2, 8], got {v}")
        return v


class ConfigLoader:
    """
    Loads and manages experiment presets.

    Usage:
        loader = ConfigLoader()
        table = loader.load(TableConfig, "table1", {"seeds": 10})
    """

    def __init__(self, config_dir: Optional[Path] = None):
        """
        Initialize configuration loader.

        Args:
            config_dir: Path to configuration directory. Defaults to
                PERMCD_CONFIG_DIR, then <project_root>/config
        """
        if config_dir is None:
            env_dir = os.getenv("PERMCD_CONFIG_DIR")
            if env_dir:
                config_dir = Path(env_dir)
            else:
                project_root = Path(__file__).parent.parent.parent
                config_dir = project_root / "config"

        self.config_dir = Path(config_dir)
        self.experiments_dir = self.config_dir / "experiments"

    def load_preset(self, preset_name: str) -> Dict[str, Any]:
        """
        Read a preset file as a flat mapping.

        Raises:
            ConfigError: If the preset is missing, empty, malformed or not flat
        """
        preset_file = self.experiments_dir / f"{preset_name}.yaml"

        if not preset_file.exists():
            raise ConfigError(
                f"Experiment preset not found: {preset_file}\n"
                f"Available presets: {self.list_available_presets()}"
            )

        try:
            with open(preset_file, 'r') as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML syntax in {preset_file}: {e}")
        except IOError as e:
            raise ConfigError(f"Could not read preset file {preset_file}: {e}")

        if data is None:
            raise ConfigError(f"Preset file {preset_file} is empty or contains only comments")
        if not isinstance(data, dict):
            raise ConfigError(f"Preset file {preset_file} must be a key: value mapping")
        nested = [k for k, v in data.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"Preset file {preset_file} must be flat; nested keys: {nested}")

        data.setdefault("name", preset_name)
        logger.debug(f"Loaded preset {preset_name} from {preset_file}")
        return data

    def load(self, model: Type[ModelT], preset_name: Optional[str] = None,
             overrides: Optional[Dict[str, Any]] = None) -> ModelT:
        """
        Build a validated config from a preset (or defaults) plus overrides.

        Args:
            model: Pydantic config class
            preset_name: Preset file stem, or None for the model defaults
            overrides: Keys to replace; None values are ignored

        Raises:
            ConfigError: On missing presets or invalid values
        """
        data = self.load_preset(preset_name) if preset_name else {}
        data.pop("kind", None)
        return _validate(model, _merge(data, overrides))

    @staticmethod
    def apply_overrides(config: ModelT, overrides: Dict[str, Any]) -> ModelT:
        """Return a re-validated copy of ``config`` with ``overrides`` applied"""
        return _validate(type(config), _merge(config.model_dump(mode="json"), overrides))

    def list_available_presets(self) -> List[str]:
        """
        List all available experiment presets.

        Returns:
            List of preset names (without .yaml extension)
        """
        if not self.experiments_dir.exists():
            return []
        return sorted(f.stem for f in self.experiments_dir.glob("*.yaml"))

    def preset_kind(self, preset_name: str) -> str:
        """The ``kind`` key of a preset: figure, table or verify"""
        return str(self.load_preset(preset_name).get("kind", "figure"))


def _merge(data: Dict[str, Any], overrides: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    merged = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    # a new seed base reuses the existing seed count
    if overrides and overrides.get("seed_base") is not None and overrides.get("seeds") is None:
        if isinstance(merged.get("seeds"), list):
            merged["seeds"] = len(merged["seeds"])
    return merged


def _validate(model: Type[ModelT], data: Dict[str, Any]) -> ModelT:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        fields = sorted({".".join(str(p) for p in err["loc"]) or "<root>" for err in e.errors()})
        raise ConfigError(f"Invalid {model.__name__} (fields: {', '.join(fields)}): {e}") from e


# Global singleton instance
_config_loader = None


def get_config_loader() -> ConfigLoader:
    """
    Get global ConfigLoader instance (singleton).

    Reads a ``.env`` file on first use so PERMCD_* variables can live there.
    """
    global _config_loader
    if _config_loader is None:
        load_dotenv()
        _config_loader = ConfigLoader()
    return _config_loader


def load_experiment_config(preset_name: Optional[str] = None,
                           overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Convenience function to load a figure experiment configuration.

    Args:
        preset_name: Preset name or None for defaults
        overrides: CLI-style overrides
    """
    return get_config_loader().load(ExperimentConfig, preset_name, overrides)
