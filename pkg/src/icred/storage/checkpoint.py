"""
Checkpoint storage for ICRED.

Layout of a checkpoint ``<path>``:
    <path>             magic line, JSON index line {name: shape}, raw <f8 data
    <path>.config      every ModelConfig field as ``key = value``
    <path>.vocab       one regular word per line
    <path>.adam        Adam moments (same tensor format), training checkpoints only
    <path>.state.json  step counters, sampler RNG state, loss curve
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from icred.config import ModelConfig, dump_key_values, read_key_value_file
from icred.corpus.vocabulary import Vocabulary
from icred.errors import ConfigError, DataError, LoadError
from icred.model.params import ModelParams, param_shapes

logger = logging.getLogger(__name__)

MAGIC = b"ICRED-CKPT-1\n"
DTYPE = np.dtype("<f8")

PathLike = Union[str, Path]


def sidecar(path: PathLike, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.name + suffix)


# ============================================================================
# TENSOR FILES
# ============================================================================

def write_tensors(path: PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    """Write named arrays: magic, JSON index, then row-major little-endian float64 data."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = {name: list(np.shape(a)) for name, a in arrays.items()}
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(index, separators=(",", ":")).encode("utf-8") + b"\n")
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype=DTYPE).tobytes())


def read_tensors(path: PathLike) -> Dict[str, np.ndarray]:
    """
    Read a tensor file written by ``write_tensors``.

    Raises:
        LoadError: Missing file, bad magic header, corrupt index or wrong data length
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise LoadError(f"Cannot read checkpoint {path}: {e}") from e
    if not blob.startswith(MAGIC):
        raise LoadError(f"{path}: header mismatch (expected {MAGIC.decode().strip()})")

    rest = blob[len(MAGIC):]
    newline = rest.find(b"\n")
    if newline < 0:
        raise LoadError(f"{path}: missing index line")
    try:
        index = json.loads(rest[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise LoadError(f"{path}: corrupt index: {e}") from e

    data = rest[newline + 1:]
    arrays: Dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in index.items():
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * DTYPE.itemsize
        if offset + nbytes > len(data):
            raise LoadError(f"{path}: data for parameter {name} is truncated")
        arrays[name] = np.frombuffer(data, dtype=DTYPE, count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(data):
        raise LoadError(f"{path}: {len(data) - offset} trailing bytes after the last parameter")
    return arrays


# ============================================================================
# MODEL CHECKPOINTS
# ============================================================================

def save_checkpoint(
    path: PathLike,
    params: ModelParams,
    config: ModelConfig,
    vocab: Optional[Vocabulary] = None
) -> Path:
    """Write parameters plus the config (and vocabulary) sidecars."""
    path = Path(path)
    write_tensors(path, params.arrays())
    sidecar(path, ".config").write_text(dump_key_values(config.model_dump(mode="json")), encoding="utf-8")
    if vocab is not None:
        vocab.save(sidecar(path, ".vocab"))
    logger.debug(f"Saved checkpoint {path}")
    return path


def read_config(path: PathLike) -> ModelConfig:
    """
    Read a checkpoint's config sidecar.

    Raises:
        LoadError: Missing sidecar or an invalid/unknown field (named)
    """
    side = sidecar(path, ".config")
    if not side.exists():
        raise LoadError(f"{path}: config sidecar {side.name} is missing")
    try:
        values = read_key_value_file(side)
    except ConfigError as e:
        raise LoadError(str(e)) from e
    unknown = sorted(set(values) - set(ModelConfig.model_fields))
    if unknown:
        raise LoadError(f"{side}: unknown field {unknown[0]}")
    try:
        return ModelConfig(**values)
    except ValidationError as e:
        field = e.errors()[0]["loc"][0] if e.errors() and e.errors()[0]["loc"] else "?"
        raise LoadError(f"{side}: invalid field {field}: {e}") from e


def check_config(loaded: ModelConfig, expected: Mapping[str, Any]) -> None:
    """
    Compare the requested settings against a checkpoint's config.

    Raises:
        LoadError: A field differs (the field is named)
    """
    unknown = sorted(set(expected) - set(ModelConfig.model_fields))
    if unknown:
        raise LoadError(f"unknown config field {unknown[0]}")
    try:
        merged = ModelConfig.model_validate({**loaded.model_dump(), **expected})
    except ValidationError as e:
        raise LoadError(f"invalid expected config: {e}") from e
    for key in expected:
        if getattr(merged, key) != getattr(loaded, key):
            raise LoadError(f"config field {key} mismatch: checkpoint has {getattr(loaded, key)!r}, requested {getattr(merged, key)!r}")


def load_checkpoint(
    path: PathLike,
    expected: Optional[Mapping[str, Any]] = None
) -> Tuple[ModelConfig, ModelParams, Optional[Vocabulary]]:
    """
    Restore config, parameters and (if present) vocabulary.

    Args:
        path: Checkpoint path
        expected: Config fields the caller requires the checkpoint to have

    Raises:
        LoadError: Header, config, vocabulary or parameter-shape mismatch
    """
    config = read_config(path)
    if expected:
        check_config(config, expected)

    arrays = read_tensors(path)
    shapes = param_shapes(config)
    for name, shape in shapes.items():
        if name not in arrays:
            raise LoadError(f"{path}: parameter {name} is missing")
        if tuple(arrays[name].shape) != shape:
            raise LoadError(f"{path}: parameter {name} has shape {tuple(arrays[name].shape)}, config expects {shape}")
    extra = sorted(set(arrays) - set(shapes))
    if extra:
        raise LoadError(f"{path}: unexpected parameter {extra[0]}")

    vocab = None
    vocab_path = sidecar(path, ".vocab")
    if vocab_path.exists():
        try:
            vocab = Vocabulary.load(vocab_path)
        except (ConfigError, DataError) as e:
            raise LoadError(str(e)) from e
        if len(vocab) != config.vocab_size:
            raise LoadError(f"{path}: vocab_size mismatch: config has {config.vocab_size}, vocabulary has {len(vocab)}")

    logger.debug(f"Loaded checkpoint {path}")
    return config, ModelParams.from_arrays(config, arrays), vocab


# ============================================================================
# TRAINING STATE
# ============================================================================

class TrainingState(BaseModel):
    """Everything besides the weights needed to continue a run bit-identically."""
    step: int = 0
    best_dev: Optional[float] = None
    best_step: Optional[int] = None
    bad_evals: int = 0
    stopped: bool = False
    rng_state: str = ""
    curve: List[Tuple[int, float, Optional[float]]] = Field(default_factory=list)


def save_training_state(path: PathLike, state: TrainingState, optimizer_arrays: Mapping[str, np.ndarray]) -> None:
    write_tensors(sidecar(path, ".adam"), optimizer_arrays)
    sidecar(path, ".state.json").write_text(state.model_dump_json(indent=2), encoding="utf-8")


def load_training_state(path: PathLike) -> Tuple[TrainingState, Dict[str, np.ndarray]]:
    """
    Raises:
        LoadError: Missing or invalid state files
    """
    side = sidecar(path, ".state.json")
    try:
        state = TrainingState.model_validate_json(side.read_text(encoding="utf-8"))
    except OSError as e:
        raise LoadError(f"Cannot read training state {side}: {e}") from e
    except ValidationError as e:
        raise LoadError(f"{side}: invalid training state: {e}") from e
    return state, read_tensors(sidecar(path, ".adam"))


class CheckpointStorage:
    """A checkpoint directory holding ``best.ckpt`` and ``last.ckpt``."""

    def __init__(self, directory: PathLike):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @property
    def best_path(self) -> Path:
        return self.directory / "best.ckpt"

    @property
    def last_path(self) -> Path:
        return self.directory / "last.ckpt"

    @property
    def curve_path(self) -> Path:
        return self.directory / "loss_curve.csv"

    def has_last(self) -> bool:
        return self.last_path.exists() and sidecar(self.last_path, ".state.json").exists()

    def save_best(self, params: ModelParams, config: ModelConfig, vocab: Optional[Vocabulary]) -> Path:
        return save_checkpoint(self.best_path, params, config, vocab)

    def save_last(
        self,
        params: ModelParams,
        config: ModelConfig,
        vocab: Optional[Vocabulary],
        state: TrainingState,
        optimizer_arrays: Mapping[str, np.ndarray]
    ) -> Path:
        save_checkpoint(self.last_path, params, config, vocab)
        save_training_state(self.last_path, state, optimizer_arrays)
        return self.last_path

    def load_last(self) -> Tuple[ModelConfig, ModelParams, Optional[Vocabulary], TrainingState, Dict[str, np.ndarray]]:
        config, params, vocab = load_checkpoint(self.last_path)
        state, adam = load_training_state(self.last_path)
        return config, params, vocab, state, adam

    def write_curve(self, curve: List[Tuple[int, float, Optional[float]]]) -> Path:
        """Loss curve CSV with header ``step,train_loss,dev_nll``."""
        lines = ["step,train_loss,dev_nll"]
        for step, train_loss, dev_nll in curve:
            lines.append(f"{step},{float(train_loss)!r},{'' if dev_nll is None else repr(float(dev_nll))}")
        self.curve_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return self.curve_path
