"""
Run configurations.

Each CLI command reads one JSON file validated by the matching schema below.
A file may name a base file with "extends"; the base is deep-merged beneath
it, so config/base.json carries the shared logging and seed settings and the
per-command files only what differs. Relative paths are resolved against the
directory of the file that declares them.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as SchemaError, field_validator

from .models.config import ModelConfig
from .models.context import ContextConfig
from .training.setups import TrainSetup
from .validation import ValidationError

logger = logging.getLogger(__name__)

EXTENDS_KEY = "extends"

LOG_FORMATS = {
    "pretty": "%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s",
    "plain": "%(levelname)s %(name)s %(message)s",
}


class ConfigError(Exception):
    """Raised for unreadable or invalid run configurations"""
    def __init__(self, message: str, field: Optional[str] = None):
        self.message = message
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


def configure_logging(level: str = "INFO", fmt: str = "pretty") -> None:
    if fmt not in LOG_FORMATS:
        raise ConfigError(f"unknown log format {fmt!r}; choose from {sorted(LOG_FORMATS)}", "logging.format")
    logging.basicConfig(level=getattr(logging, level.upper()), format=LOG_FORMATS[fmt], force=True)


class Schema(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LoggingSection(Schema):
    level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    format: Literal["pretty", "plain"] = "pretty"


def _check_with(builder, value, what: str):
    try:
        builder(value)
    except (ValidationError, TypeError) as e:
        raise ValueError(f"invalid {what}: {e}") from e
    return value


class RunConfig(Schema):
    """Settings shared by every command"""
    seed: int = 0
    out: str = "runs/default"
    threads: Optional[int] = Field(default=None, ge=1)
    logging: LoggingSection = LoggingSection()
    deterministic: bool = True


class GenConfig(RunConfig):
    family: str
    simulations: int = Field(default=1, ge=1)
    resolution: List[int] = [32, 32, 32]
    snapshots: int = Field(default=30, ge=1)
    order: Literal[2, 4] = 2
    store_dtype: Literal["f32", "f64"] = "f32"
    extent: Optional[float] = None
    dt_store: Optional[float] = None
    substeps: Optional[int] = None
    warmup: Optional[int] = None
    params: Optional[Dict[str, float]] = None

    @field_validator("family")
    @classmethod
    def _known_family(cls, value: str) -> str:
        from .datagen.families import FAMILIES
        if value not in FAMILIES:
            raise ValueError(f"unknown family {value!r}; choose from {sorted(FAMILIES)}")
        return value

    @field_validator("resolution")
    @classmethod
    def _three_extents(cls, value: List[int]) -> List[int]:
        if len(value) != 3 or min(value) < 2:
            raise ValueError(f"resolution needs three extents >= 2, got {value}")
        return value


class DataSection(Schema):
    datasets: List[str]
    channels: Optional[int] = None
    history: int = Field(default=1, ge=1)
    param_keys: List[str] = []
    split: Literal["train", "val", "test", "all"] = "all"


class TrainConfig(RunConfig):
    data: DataSection
    model: Dict[str, Any] = {"preset": "tiny"}
    setup: Dict[str, Any] = {}
    resume: Optional[str] = None

    @field_validator("model")
    @classmethod
    def _model(cls, value):
        return _check_with(ModelConfig.from_dict, value, "model config")

    @field_validator("setup")
    @classmethod
    def _setup(cls, value):
        return _check_with(lambda v: TrainSetup(**v), value, "train setup")

    def build_setup(self) -> TrainSetup:
        return TrainSetup(**self.setup)


class FinetuneConfig(TrainConfig):
    pretrained: str
    use_ema: bool = True
    context: Dict[str, Any] = {}

    @field_validator("context")
    @classmethod
    def _context(cls, value):
        return _check_with(lambda v: ContextConfig(**v), value, "context config")


class EvalSection(Schema):
    checkpoint: str
    use_ema: bool = True


class RolloutConfig(RunConfig, EvalSection):
    data: DataSection
    strategy: str
    steps: int = Field(default=16, ge=1)
    start: int = Field(default=0, ge=0)
    sample_steps: Optional[int] = Field(default=None, ge=1)
    window: Literal["hann", "none"] = "hann"
    periodic: bool = True
    slices: bool = True


class SampleConfig(RunConfig, EvalSection):
    data: DataSection
    steps: int = Field(default=100, ge=1)
    samples: int = Field(default=4, ge=1)
    flow_axis: int = Field(default=0, ge=0)
    wall_axis: int = Field(default=1, ge=0, le=2)
    group_by: Optional[str] = None
    strategy: Optional[str] = None


class GradcheckConfig(RunConfig):
    model: Dict[str, Any] = {"preset": "tiny"}
    extents: List[int] = [16, 16, 16]
    batch: int = Field(default=1, ge=1)
    samples_per_tensor: int = Field(default=3, ge=1)
    step: float = 1e-6
    rtol: float = 1e-4
    perturb: float = 0.05

    @field_validator("model")
    @classmethod
    def _model(cls, value):
        return _check_with(ModelConfig.from_dict, value, "model config")


SCHEMAS: Dict[str, Type[RunConfig]] = {
    "gen": GenConfig,
    "train": TrainConfig,
    "finetune": FinetuneConfig,
    "rollout": RolloutConfig,
    "sample": SampleConfig,
    "gradcheck": GradcheckConfig,
}

PATH_FIELDS = ("out", "resume", "pretrained", "checkpoint")

C = TypeVar("C", bound=RunConfig)


def deep_merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _resolve_paths(data: Dict[str, Any], root: Path) -> Dict[str, Any]:
    data = dict(data)
    for key in PATH_FIELDS:
        if isinstance(data.get(key), str):
            data[key] = str((root / data[key]).resolve())
    section = data.get("data")
    if isinstance(section, dict) and isinstance(section.get("datasets"), list):
        data["data"] = {**section, "datasets": [str((root / p).resolve()) for p in section["datasets"]]}
    return data


def read_layered(path: Union[str, Path], _seen: Optional[set] = None) -> Dict[str, Any]:
    """The file's JSON with its "extends" chain merged underneath and paths made absolute."""
    path = Path(path).resolve()
    seen = _seen or set()
    if path in seen:
        raise ConfigError(f"circular extends chain through {path}", EXTENDS_KEY)
    seen.add(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except ValueError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    data = _resolve_paths(data, path.parent)
    parent = data.pop(EXTENDS_KEY, None)
    if parent is None:
        return data
    return deep_merge(read_layered(path.parent / parent, seen), data)


def load_run_config(
    command: str,
    path: Union[str, Path],
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Validate the layered config for `command`; non-None overrides replace file values."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}", "command")
    data = read_layered(path)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = str(Path(value).resolve()) if key in PATH_FIELDS else value
    try:
        config = SCHEMAS[command].model_validate(data)
    except SchemaError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        logger.error(f"Invalid {command} config {path}: {e}")
        raise ConfigError(first["msg"], location or None) from e
    return config
