"""
Run Configuration
Defaults, .env overrides, TOML config files and command-line flags, resolved
into one RunConfig. Later sources win: defaults < environment < file < flags.
"""

import logging
import os
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import pandas as pd
from dotenv import load_dotenv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from analysis.detector import CorrelationMethod, DetectionRule, RuleKind
from analysis.errors import ConfigError, ContractViolation
from analysis.profiler import WindowSpec
from analysis.wpe_core import EmbeddingConfig
from utils.ingest import CleaningPolicy, CsvSchema, CurtailmentPolicy

logger = logging.getLogger(__name__)

ENV_PREFIX = "PVWPE_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
DAYS_PER_MONTH = 30

_DURATION = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([a-z]*)\s*$")
_UNITS = {
    "": None, "s": None, "sample": None, "samples": None,
    "d": 1, "day": 1, "days": 1,
    "w": 7, "week": 7, "weeks": 7,
    "month": DAYS_PER_MONTH, "months": DAYS_PER_MONTH,
}


def load_toml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from e


def parse_duration(value: Union[int, str], interval: pd.Timedelta = pd.Timedelta(minutes=5)) -> int:
    """Samples in a duration: '25920', '90d', '90 days', '13 weeks' or '3 months' (30-day months)"""
    if isinstance(value, bool):
        raise ConfigError(f"invalid duration {value!r}")
    if isinstance(value, int):
        samples = value
    else:
        match = _DURATION.match(str(value).lower())
        if not match or match.group(2) not in _UNITS:
            raise ConfigError(f"invalid duration '{value}' (use samples, days, weeks or months)")
        amount, days = float(match.group(1)), _UNITS[match.group(2)]
        if days is None:
            if not amount.is_integer():
                raise ConfigError(f"sample count must be whole, got '{value}'")
            samples = int(amount)
        else:
            samples = pd.Timedelta(days=amount * days) / pd.Timedelta(interval)
            if not float(samples).is_integer():
                raise ConfigError(f"duration '{value}' is not a whole number of {interval} samples")
            samples = int(samples)
    if samples < 1:
        raise ConfigError(f"duration '{value}' must cover at least one sample")
    return samples


@dataclass
class RunConfig:
    """Everything one CLI invocation needs"""
    inputs: List[str] = field(default_factory=list)
    layout: str = "long"
    metadata: Optional[str] = None
    timezone: Optional[str] = None
    interval_minutes: int = 5

    d: int = 6
    tau: int = 3
    width: Union[int, str] = "3 months"
    stride: Union[int, str] = "1d"

    rule: str = "fixed"
    threshold: float = 0.8
    method: str = "pearson"
    band: float = 2.0
    leave_one_out: bool = False
    max_undefined_fraction: float = 0.25
    regions: List[str] = field(default_factory=list)

    max_missing: int = 200
    negative_epsilon: float = 0.01
    curtailment_months: int = 7
    plateau_samples: int = 12
    plateau_tolerance: float = 0.005

    d_values: List[int] = field(default_factory=lambda: [3, 4, 5, 6, 7])
    tau_values: List[int] = field(default_factory=lambda: [1, 2, 3])

    out: str = "out"
    workers: int = 1
    log_level: str = "INFO"
    log_file: Optional[str] = None
    truth: Optional[str] = None
    spec: Optional[str] = None

    @property
    def interval(self) -> pd.Timedelta:
        return pd.Timedelta(minutes=self.interval_minutes)

    @property
    def width_samples(self) -> int:
        return parse_duration(self.width, self.interval)

    @property
    def stride_samples(self) -> int:
        return parse_duration(self.stride, self.interval)

    def embedding(self) -> EmbeddingConfig:
        return EmbeddingConfig(self.d, self.tau)

    def window(self) -> WindowSpec:
        return WindowSpec(self.width_samples, self.stride_samples)

    def grid(self) -> List[EmbeddingConfig]:
        return [EmbeddingConfig(d, tau) for d in self.d_values for tau in self.tau_values]

    def detection_rule(self) -> DetectionRule:
        return DetectionRule(RuleKind(self.rule), self.threshold)

    def correlation_method(self) -> CorrelationMethod:
        return CorrelationMethod(self.method)

    def csv_schema(self) -> CsvSchema:
        return CsvSchema(self.layout, self.interval, self.metadata, self.timezone)

    def cleaning_policy(self) -> CleaningPolicy:
        return CleaningPolicy(max_missing=self.max_missing)

    def curtailment_policy(self) -> CurtailmentPolicy:
        return CurtailmentPolicy(
            negative_epsilon=self.negative_epsilon,
            max_months=self.curtailment_months,
            plateau_samples=self.plateau_samples,
            plateau_tolerance=self.plateau_tolerance,
        )

    def validate(self, require_inputs: bool = True) -> "RunConfig":
        """Check paths and the joint embedding/window constraints"""
        if require_inputs and not self.inputs:
            raise ConfigError("no input files given")
        for path in list(self.inputs) + [p for p in (self.metadata, self.truth, self.spec) if p]:
            if not Path(path).exists():
                raise ConfigError(f"path does not exist: {path}")
        if self.log_level.upper() not in LOG_LEVELS:
            raise ConfigError(f"log level must be one of {', '.join(LOG_LEVELS)}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.rule not in ("fixed", "iqr"):
            raise ConfigError(f"rule must be 'fixed' or 'iqr', got '{self.rule}'")
        if self.method not in ("pearson", "spearman"):
            raise ConfigError(f"method must be 'pearson' or 'spearman', got '{self.method}'")

        try:
            cfg = self.embedding()
            window = self.window()
            window.validate_for(cfg)
            self.grid()
            self.csv_schema()
        except ContractViolation as e:
            raise ConfigError(str(e)) from e
        if window.width <= cfg.recommended_window:
            logger.warning(f"⚠️ Window width {window.width} is not above 5·d! = {cfg.recommended_window}")
        return self


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    """Cast a string (from the environment) to the field's declared type"""
    default = _FIELDS[name].default
    if not isinstance(value, str) or isinstance(default, str) or default is None:
        return value
    try:
        if isinstance(default, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"invalid value '{value}' for {name}")
    return value


def env_overrides(dotenv_path: Optional[str] = None) -> Dict[str, Any]:
    """PVWPE_* variables, after loading .env if present"""
    load_dotenv(dotenv_path, override=False)
    overrides = {}
    for name in ("workers", "log_level", "out"):
        raw = os.getenv(f"{ENV_PREFIX}{name.upper()}")
        if raw:
            overrides[name] = _coerce(name, raw)
    return overrides


def file_overrides(path: Union[str, Path]) -> Dict[str, Any]:
    """Settings from a TOML file; keys use the RunConfig field names, tables are flattened"""
    flat: Dict[str, Any] = {}
    for key, value in load_toml(path).items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    unknown = sorted(set(flat) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown settings in {path}: {unknown}")
    return flat


def build_run_config(flags: Optional[Mapping[str, Any]] = None,
                     config_path: Optional[str] = None,
                     dotenv_path: Optional[str] = None) -> RunConfig:
    """Merge defaults, environment, config file and flags (None flags are ignored)"""
    settings: Dict[str, Any] = {}
    settings.update(env_overrides(dotenv_path))
    if config_path:
        settings.update(file_overrides(config_path))
    for name, value in (flags or {}).items():
        if name in _FIELDS and value is not None:
            settings[name] = value
    try:
        return RunConfig(**settings)
    except TypeError as e:
        raise ConfigError(str(e)) from e
