"""
Configuration management for ICRED.

Environment settings come from ``ICRED_*`` variables (and an optional ``.env``
file); run configuration comes from flat ``key = value`` files merged with
command-line flags. Precedence is flag > config file > built-in default.
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Any, ClassVar, Dict, Literal, Mapping, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from icred.errors import ConfigError

# Load .env file from project root
PROJECT_ROOT = Path(__file__).parent.parent.parent
ENV_FILE = PROJECT_ROOT / ".env"
RESOURCES_DIR = Path(__file__).parent / "resources"

load_dotenv(ENV_FILE)


class Settings(BaseSettings):
    """Process-wide settings loaded from environment variables."""

    log: Literal["error", "info", "debug"] = Field(
        default="info",
        description="Log verbosity (ICRED_LOG)"
    )
    threads: int = Field(
        default=1,
        ge=1,
        description="Default worker cap for per-instance tapes (ICRED_THREADS)"
    )
    resources_dir: Path = Field(
        default=RESOURCES_DIR,
        description="Directory holding the generic-response rules and noun lexicon"
    )

    model_config = SettingsConfigDict(
        env_prefix="ICRED_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    @property
    def generic_rules_path(self) -> Path:
        return self.resources_dir / "generic_responses.txt"

    @property
    def noun_lexicon_path(self) -> Path:
        return self.resources_dir / "nouns.txt"


class MemoryType(str, Enum):
    """What the decoder attends over."""

    ADDRESSEE = "addressee"
    ALL = "all"
    LATEST = "latest"
    SPEAKER = "speaker"
    NONE = "none"


class ModelConfig(BaseModel):
    """Architecture hyperparameters; saved next to every checkpoint."""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    word_dim: int = Field(default=300, gt=0)
    utterance_hidden_dim: int = Field(default=512, gt=0, description="Both directions together")
    interlocutor_dim: int = Field(default=1024, gt=0)
    decoder_dim: int = Field(default=512, gt=0)
    vocab_size: Optional[int] = Field(default=None, gt=0)
    max_utterance_length: int = Field(default=20, gt=0)
    max_response_length: int = Field(default=20, gt=0)
    memory_type: MemoryType = MemoryType.ADDRESSEE
    use_speaker_vector: bool = True
    use_addressee_vector: bool = True
    joint_prediction: bool = False
    l2_weight: float = Field(default=1e-4, ge=0.0)
    prediction_weight: float = Field(default=1.0, ge=0.0)
    empty_memory_fallback: Literal["zero", "latest"] = "zero"

    @field_validator("memory_type", mode="before")
    @classmethod
    def _memory_alias(cls, value: Any) -> Any:
        if isinstance(value, str) and value.lower() in ("all-utterance", "all_utterance"):
            return MemoryType.ALL
        return value

    @model_validator(mode="after")
    def _even_encoder(self) -> "ModelConfig":
        if self.utterance_hidden_dim % 2:
            raise ValueError("utterance_hidden_dim must be even (split across two directions)")
        return self

    @property
    def encoder_dim(self) -> int:
        """Hidden size of one encoder direction."""
        return self.utterance_hidden_dim // 2


class TrainConfig(BaseModel):
    """Training loop hyperparameters. The L2 weight is read from ModelConfig."""

    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(default=32, ge=1)
    max_steps: int = Field(default=1000, ge=0)
    lr: float = Field(default=1e-3, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    eval_every: int = Field(default=100, ge=1)
    patience: int = Field(default=5, ge=1)
    seed: int = 13
    threads: Optional[int] = Field(default=None, ge=1, description="Worker cap; unset falls back to ICRED_THREADS")
    max_grad_norm: Optional[float] = Field(default=None, gt=0.0)
    checkpoint_dir: Optional[Path] = None
    show_progress: bool = False

    @property
    def workers(self) -> int:
        """Resolved worker count: ``threads`` when set, otherwise ICRED_THREADS."""
        return self.threads or settings.threads


class PathsConfig(BaseModel):
    """File locations used by the CLI commands."""

    model_config = ConfigDict(extra="forbid")

    corpus: Optional[Path] = None
    train_corpus: Optional[Path] = None
    dev_corpus: Optional[Path] = None
    vocab: Optional[Path] = None
    lexicon: Optional[Path] = None
    rules: Optional[Path] = None
    checkpoint: Optional[Path] = None
    output: Optional[Path] = None
    word_vectors: Optional[Path] = None


class RunConfig(BaseModel):
    """Merged view of model, training and path settings."""

    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    SECTIONS: ClassVar[Tuple[str, ...]] = ("model", "train", "paths")

    @classmethod
    def section_of(cls, key: str) -> str:
        """Return which section declares a flat key."""
        for section, model in (("model", ModelConfig), ("train", TrainConfig), ("paths", PathsConfig)):
            if key in model.model_fields:
                return section
        raise ConfigError(f"Unknown configuration key: {key!r}")

    @classmethod
    def from_flat(cls, values: Mapping[str, Any]) -> "RunConfig":
        """
        Build a RunConfig from a flat mapping of keys.

        Args:
            values: Flat key -> value mapping (config file merged with flags)

        Returns:
            Validated RunConfig

        Raises:
            ConfigError: Unknown key or invalid value
        """
        sections: Dict[str, Dict[str, Any]] = {name: {} for name in cls.SECTIONS}
        for key, value in values.items():
            sections[cls.section_of(key)][key] = value
        try:
            return cls(**sections)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}") from e

    def flat(self) -> Dict[str, Any]:
        """Flatten back to key -> value (None values dropped)."""
        out: Dict[str, Any] = {}
        for section in self.SECTIONS:
            out.update(getattr(self, section).model_dump(mode="json", exclude_none=True))
        return out

    def require_paths(self, *names: str, must_exist: bool = True) -> None:
        """
        Validate path settings before any work starts.

        Raises:
            ConfigError: A required path is unset or missing on disk
        """
        for name in names:
            path = getattr(self.paths, name)
            if path is None:
                raise ConfigError(f"Missing required path setting: {name}")
            if must_exist and not Path(path).exists():
                raise ConfigError(f"{name} not found: {path}")


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    Parse ``key = value`` lines. Blank lines and ``#`` comments are skipped.

    Raises:
        ConfigError: A line without ``=`` or a duplicated key
    """
    values: Dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        values[key] = value
    return values


def dump_key_values(values: Mapping[str, Any]) -> str:
    """Render a mapping as ``key = value`` lines (bools lowercase, sorted keys)."""
    lines = []
    for key in sorted(values):
        value = values[key]
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, Enum):
            value = value.value
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def read_key_value_file(path: Path) -> Dict[str, str]:
    """Read a ``key = value`` file, raising ConfigError when it is unreadable."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    return parse_key_values(text, source=str(path))


def load_run_config(
    config_path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    """
    Resolve a RunConfig: defaults, then the config file, then flag overrides.

    Args:
        config_path: Optional ``key = value`` file
        overrides: Command-line values; ``None`` entries mean "not given"

    Returns:
        Validated RunConfig
    """
    values: Dict[str, Any] = {}
    if config_path is not None:
        values.update(read_key_value_file(config_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return RunConfig.from_flat(values)


def setup_logging(level: Optional[str] = None) -> None:
    """Install a rich log handler at the requested (or ICRED_LOG) level."""
    from rich.logging import RichHandler

    level_name = (level or settings.log).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(show_path=False, rich_tracebacks=False)],
        force=True
    )


def print_config_status(run_config: RunConfig, console=None) -> None:
    """Print the resolved configuration as a table."""
    from rich.console import Console
    from rich.table import Table

    console = console or Console()

    table = Table(title="ICRED Configuration")
    table.add_column("Section", style="cyan")
    table.add_column("Setting", style="green")
    table.add_column("Value", style="yellow")

    for section in RunConfig.SECTIONS:
        sub = getattr(run_config, section)
        for key, value in sub.model_dump(mode="json").items():
            table.add_row(section, key, "-" if value is None else str(value))

    table.add_row("env", "log", settings.log)
    table.add_row("env", "threads", str(settings.threads))
    console.print(table)


# Create settings instance
try:
    settings = Settings()
except Exception as e:
    print(f"Error loading settings: {e}")
    settings = Settings(log="info", threads=1)
