#!/usr/bin/env python3
"""
Experiment Configuration Manager

Configuration is layered in a fixed order:
- dataclass defaults
- a JSON file (``config/experiment_config.json`` by default)
- environment variables ``PIKRVI_<SECTION>_<KEY>``
- explicit overrides from the command line

Every field is addressed by a dotted path (``agent.lambda``, ``env.horizon``)
and validation errors carry that path.
"""

import json
import logging
import os
import typing
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from agent.errors import ConfigurationError
from agent.kernels import EigendecayProfile, KernelFamily, KernelSpec
from agent.krvi import AgentConfig, BetaMode
from envs.mdp import InitialStateMode
from theory.bounds import BoundConstants

ENV_PREFIX = "PIKRVI"
DEFAULT_CONFIG_FILE = Path(__file__).resolve().parent.parent / "config" / "experiment_config.json"

AGENT_KINDS = ("pi_krvi", "kovi", "random", "optimal")
CHECK_NAMES = (
    "krr_oracle",
    "partition_capacity",
    "cover_growth",
    "info_gain_soundness",
    "confidence_coverage",
    "regret_scaling",
    "exponent_identity",
    "reductions",
    "dp_oracle",
    "kernel_properties",
    "regression_properties",
    "env_properties",
    "optimism_audit",
)


def _key(name: str, **kwargs):
    """Field whose JSON key differs from the attribute name."""
    metadata = {"key": name}
    return field(metadata=metadata, **kwargs)


@dataclass
class KernelConfig:
    """Kernel block; the finite-spectrum profile uses ``p``, ``alpha``, ``eta`` and ``c_p``."""
    family: KernelFamily = KernelFamily.MATERN
    nu: float = 0.5
    lengthscale: float = 0.5
    num_features: int = 64
    seed: int = 0
    p: float = 4.0
    alpha: float = 1.0
    eta: float = 0.0
    c_p: float = 1.0

    def to_spec(self, dimension: int) -> KernelSpec:
        if self.family is KernelFamily.MATERN:
            return KernelSpec.matern(self.nu, self.lengthscale, dimension)
        if self.family is KernelFamily.SQUARED_EXPONENTIAL:
            return KernelSpec.squared_exponential(self.lengthscale, dimension)
        profile = EigendecayProfile(p=self.p, alpha=self.alpha, eta=self.eta, c_p=self.c_p)
        return KernelSpec.finite_spectrum(profile, self.num_features, self.seed, dimension)


@dataclass
class EnvConfig:
    d_s: int = 1
    d_a: int = 1
    grid_per_dim: int = 32
    num_actions: int = 8
    horizon: int = 3
    num_centers: int = 5
    seed: int = 0
    initial_mode: InitialStateMode = InitialStateMode.CYCLE
    fixed_state: int = 0
    floor: float = 1e-6

    @property
    def joint_dim(self) -> int:
        return self.d_s + self.d_a

    @property
    def num_states(self) -> int:
        return self.grid_per_dim ** self.d_s


@dataclass
class AgentSection:
    lam: float = _key("lambda", default=0.1)
    beta_mode: BetaMode = BetaMode.FIXED_CONSTANT
    c_beta: float = 0.6
    delta: float = 0.1
    alpha: Optional[float] = None
    partition: bool = True

    def to_agent_config(self, partition: Optional[bool] = None) -> AgentConfig:
        return AgentConfig(lam=self.lam, beta_mode=self.beta_mode, c_beta=self.c_beta,
                           delta=self.delta, alpha_override=self.alpha,
                           partition_enabled=self.partition if partition is None else partition)


@dataclass
class TheoryConfig:
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0
    c5: float = 1.0
    c6: float = 1.0
    c_regret: float = 1.0
    t_max: int = 10000

    def constants(self) -> BoundConstants:
        return BoundConstants(c2=self.c2, c3=self.c3, c4=self.c4, c5=self.c5,
                              c6=self.c6, c_regret=self.c_regret)


@dataclass
class CoverageConfig:
    """Confidence-coverage trial: a known RKHS target fitted on noisy random designs."""
    trials: int = 500
    dimension: int = 1
    design_size: int = 50
    noise: float = 0.1
    query_grid: int = 64
    delta: float = 0.1
    slack: float = 0.0
    target_centers: int = 5
    kernel_p: float = 4.0
    kernel_alpha: float = 1.0
    num_features: int = 16
    lam: float = _key("lambda", default=1.0)
    seed: int = 0


@dataclass
class VerifyConfig:
    """Sizes used by the verification suite."""
    krr_instances: int = 50
    krr_max_points: int = 200
    capacity_episodes: int = 2000
    cover_records: int = 2000
    info_gain_t: int = 2000
    info_gain_features: int = 200
    coverage_trials: int = 500
    regret_episodes: int = 5000
    regret_seeds: int = 5
    slope_tolerance: float = 0.15
    exponent_pairs: int = 20
    bandit_episodes: int = 300
    dp_mc_episodes: int = 100000
    optimism_episodes: int = 100
    seed: int = 0


@dataclass
class ExperimentSection:
    num_episodes: int = 5000
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    agents: List[str] = field(default_factory=lambda: ["pi_krvi", "kovi", "random"])
    output_dir: str = "results"
    workers: int = 1
    burn_in_fraction: float = 0.2
    log_level: str = "INFO"
    checks: List[str] = field(default_factory=lambda: list(CHECK_NAMES))


_SECTIONS = {
    "kernel": KernelConfig,
    "env": EnvConfig,
    "agent": AgentSection,
    "theory": TheoryConfig,
    "coverage": CoverageConfig,
    "verify": VerifyConfig,
    "experiment": ExperimentSection,
}


def _json_key(f) -> str:
    return f.metadata.get("key", f.name)


def _coerce(path: str, value: Any, annotation) -> Any:
    """Convert a JSON or environment value to the annotated field type."""
    origin = typing.get_origin(annotation)
    if origin is Union:
        inner = [arg for arg in typing.get_args(annotation) if arg is not type(None)][0]
        if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
            return None
        return _coerce(path, value, inner)
    if origin in (list, List):
        (inner,) = typing.get_args(annotation)
        if isinstance(value, str):
            value = [item.strip() for item in value.split(",") if item.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(path, f"expected a list, got {value!r}")
        return [_coerce(f"{path}[{i}]", item, inner) for i, item in enumerate(value)]
    try:
        if isinstance(annotation, type) and issubclass(annotation, Enum):
            return annotation(value.value if isinstance(value, Enum) else str(value).lower())
        if annotation is bool:
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if annotation is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if annotation is float:
            return float(value)
        if annotation is str:
            return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(path, f"cannot interpret {value!r} as {getattr(annotation, '__name__', annotation)}") from exc
    return value


def _section_to_dict(section) -> Dict[str, Any]:
    result = {}
    for f in fields(section):
        value = getattr(section, f.name)
        if isinstance(value, Enum):
            value = value.value
        elif isinstance(value, list):
            value = list(value)
        result[_json_key(f)] = value
    return result


def _section_from_dict(name: str, cls, data: Dict[str, Any]):
    if not isinstance(data, dict):
        raise ConfigurationError(name, "section must be a JSON object")
    hints = typing.get_type_hints(cls)
    by_key = {_json_key(f): f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in by_key:
            raise ConfigurationError(f"{name}.{key}", "unknown configuration key")
        f = by_key[key]
        kwargs[f.name] = _coerce(f"{name}.{key}", value, hints[f.name])
    return cls(**kwargs)


@dataclass
class ExperimentConfig:
    """The full configuration tree."""
    kernel: KernelConfig = field(default_factory=KernelConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentSection = field(default_factory=AgentSection)
    theory: TheoryConfig = field(default_factory=TheoryConfig)
    coverage: CoverageConfig = field(default_factory=CoverageConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for serialization."""
        return {name: _section_to_dict(getattr(self, name)) for name in _SECTIONS}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """Create a config from a nested dictionary, converting enums and lists."""
        sections = {}
        for name, value in data.items():
            if name not in _SECTIONS:
                raise ConfigurationError(name, "unknown configuration section")
            sections[name] = _section_from_dict(name, _SECTIONS[name], value)
        return cls(**sections)

    def kernel_spec(self, dimension: Optional[int] = None) -> KernelSpec:
        return self.kernel.to_spec(dimension or self.env.joint_dim)

    def get(self, path: str) -> Any:
        section, key = self._resolve(path)
        return getattr(getattr(self, section), key.name)

    def set(self, path: str, value: Any):
        section, f = self._resolve(path)
        hints = typing.get_type_hints(_SECTIONS[section])
        setattr(getattr(self, section), f.name, _coerce(path, value, hints[f.name]))

    def _resolve(self, path: str):
        if "." not in path:
            raise ConfigurationError(path, "expected a dotted section.key path")
        section, key = path.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigurationError(path, "unknown configuration section")
        for f in fields(_SECTIONS[section]):
            if _json_key(f) == key:
                return section, f
        raise ConfigurationError(path, "unknown configuration key")


def validation_errors(config: ExperimentConfig) -> List[Tuple[str, str]]:
    """Every violated constraint as (dotted path, message)."""
    errors: List[Tuple[str, str]] = []

    def require(ok: bool, path: str, message: str):
        if not ok:
            errors.append((path, message))

    k, e, a, th, cov, ex = (config.kernel, config.env, config.agent, config.theory,
                            config.coverage, config.experiment)
    require(k.nu > 0, "kernel.nu", "must be positive")
    require(k.lengthscale > 0, "kernel.lengthscale", "must be positive")
    require(k.num_features >= 1, "kernel.num_features", "must be >= 1")
    require(k.p > 1, "kernel.p", "must exceed 1")
    require(k.alpha > 0, "kernel.alpha", "must be positive")
    require(k.eta >= 0, "kernel.eta", "must be non-negative")
    require(k.c_p > 0, "kernel.c_p", "must be positive")

    require(e.d_s >= 1, "env.d_s", "must be >= 1")
    require(e.d_a >= 1, "env.d_a", "must be >= 1")
    require(e.grid_per_dim >= 2, "env.grid_per_dim", "must be >= 2")
    require(e.num_actions >= 1, "env.num_actions", "must be >= 1")
    require(e.horizon >= 1, "env.horizon", "must be >= 1")
    require(e.num_centers >= 1, "env.num_centers", "must be >= 1")
    require(e.floor > 0, "env.floor", "must be positive")
    if e.d_s >= 1 and e.grid_per_dim >= 2:
        require(0 <= e.fixed_state < e.num_states, "env.fixed_state",
                f"must lie in [0, {e.num_states})")

    require(a.lam > 0, "agent.lambda", "must be positive")
    require(0 < a.delta < 1, "agent.delta", "must lie in (0, 1)")
    require(a.c_beta > 0, "agent.c_beta", "must be positive")
    require(a.alpha is None or a.alpha > 0, "agent.alpha", "must be positive or null")
    if a.partition and a.alpha is None:
        require(k.family is not KernelFamily.SQUARED_EXPONENTIAL, "agent.alpha",
                "required with the squared-exponential kernel")

    for name in ("c1", "c2", "c3", "c4", "c5", "c6", "c_regret"):
        require(getattr(th, name) > 0, f"theory.{name}", "must be positive")
    require(th.t_max >= 1, "theory.t_max", "must be >= 1")

    require(cov.trials >= 100, "coverage.trials", "must be >= 100")
    require(cov.dimension >= 1, "coverage.dimension", "must be >= 1")
    require(cov.design_size >= 1, "coverage.design_size", "must be >= 1")
    require(cov.noise >= 0, "coverage.noise", "must be non-negative")
    require(cov.query_grid >= 2, "coverage.query_grid", "must be >= 2")
    require(0 < cov.delta < 1, "coverage.delta", "must lie in (0, 1)")
    require(cov.slack >= 0, "coverage.slack", "must be non-negative")
    require(cov.target_centers >= 1, "coverage.target_centers", "must be >= 1")
    require(cov.kernel_p > 1, "coverage.kernel_p", "must exceed 1")
    require(cov.kernel_alpha > 0, "coverage.kernel_alpha", "must be positive")
    require(cov.num_features >= 1, "coverage.num_features", "must be >= 1")
    require(cov.lam > 0, "coverage.lambda", "must be positive")

    for f in fields(config.verify):
        value = getattr(config.verify, f.name)
        require(value > 0 or f.name == "seed", f"verify.{f.name}", "must be positive")

    require(ex.num_episodes >= 1, "experiment.num_episodes", "must be >= 1")
    require(len(ex.seeds) > 0, "experiment.seeds", "must be non-empty")
    require(len(ex.agents) > 0, "experiment.agents", "must be non-empty")
    for i, kind in enumerate(ex.agents):
        require(kind in AGENT_KINDS, f"experiment.agents[{i}]", f"unknown agent kind {kind!r}")
    for i, check in enumerate(ex.checks):
        require(check in CHECK_NAMES, f"experiment.checks[{i}]", f"unknown check {check!r}")
    require(ex.workers >= 1, "experiment.workers", "must be >= 1")
    require(0 <= ex.burn_in_fraction < 1, "experiment.burn_in_fraction", "must lie in [0, 1)")
    require(ex.log_level.upper() in ("DEBUG", "INFO", "WARNING", "ERROR"),
            "experiment.log_level", "must be DEBUG, INFO, WARNING or ERROR")
    return errors


class ConfigManager:
    """
    Loads, overrides, validates and exports the experiment configuration.

    Args:
        config_file: JSON file to read; falls back to ``PIKRVI_CONFIG_FILE``
            and then the bundled default. A missing explicit file is an error.
        environ: environment mapping, ``os.environ`` when omitted
    """

    def __init__(self, config_file: Optional[Union[str, Path]] = None,
                 environ: Optional[Dict[str, str]] = None):
        self.logger = logging.getLogger(__name__)
        self.environ = os.environ if environ is None else environ
        explicit = config_file or self.environ.get(f"{ENV_PREFIX}_CONFIG_FILE")
        self.config_file = Path(explicit) if explicit else DEFAULT_CONFIG_FILE
        self._explicit_file = bool(explicit)
        self._config = ExperimentConfig()

    @property
    def config(self) -> ExperimentConfig:
        return self._config

    def load(self, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
        """Apply every layer in order and validate the result."""
        self._config = ExperimentConfig()
        if self.config_file.exists():
            self._load_from_file(self.config_file)
        elif self._explicit_file:
            raise ConfigurationError("config_file", f"{self.config_file} does not exist")
        self._apply_env_variables()
        for path, value in (overrides or {}).items():
            if value is not None:
                self._config.set(path, value)
        self.validate()
        return self._config

    def _load_from_file(self, file_path: Path):
        try:
            with open(file_path, "r") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError("config_file", f"{file_path} is not valid JSON: {exc}") from exc
        self._config = ExperimentConfig.from_dict(data.get("experiment_config", data))
        self.logger.info(f"Configuration loaded from {file_path}")

    def _apply_env_variables(self):
        """Apply ``PIKRVI_<SECTION>_<KEY>`` overrides, e.g. ``PIKRVI_AGENT_LAMBDA=0.5``."""
        for section, cls in _SECTIONS.items():
            for f in fields(cls):
                key = _json_key(f)
                name = f"{ENV_PREFIX}_{section.upper()}_{key.upper()}"
                if name in self.environ:
                    self._config.set(f"{section}.{key}", self.environ[name])
                    self.logger.debug(f"{section}.{key} overridden from {name}")

    def validate(self):
        """Raise ``ConfigurationError`` for the first violation; log all of them."""
        errors = validation_errors(self._config)
        for path, message in errors:
            self.logger.error(f"Invalid configuration {path}: {message}")
        if errors:
            raise ConfigurationError(*errors[0])

    def export(self, file_path: Union[str, Path]) -> Path:
        """Write the effective configuration as JSON."""
        path = Path(file_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump({"experiment_config": self._config.to_dict()}, f, indent=2)
        self.logger.info(f"Configuration written to {path}")
        return path


def load_config(config_file: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None,
                environ: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """Convenience wrapper: build a manager, load and validate."""
    return ConfigManager(config_file, environ).load(overrides)
