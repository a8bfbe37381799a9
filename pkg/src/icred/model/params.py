"""
Trainable weights of the ICRED network, addressable by name.
"""

import logging
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional, Tuple, Union

import numpy as np

from icred.config import ModelConfig
from icred.corpus.vocabulary import Vocabulary
from icred.errors import ConfigError, DimensionError
from icred.tensor import GruParams, Value, parameter, sum_squares, uniform_init
from icred.tensor.layers import GATE_NAMES

logger = logging.getLogger(__name__)

GRU_BLOCKS = ("enc_fwd", "enc_bwd", "gru_spk", "gru_adr", "gru_obs", "gru_dec")


def _vocab_size(config: ModelConfig) -> int:
    if config.vocab_size is None:
        raise ConfigError("vocab_size must be set before building parameters")
    return config.vocab_size


def gru_dims(config: ModelConfig) -> Dict[str, Tuple[int, int]]:
    """(hidden, input) size of every GRU block."""
    d_w, d_e, d_u = config.word_dim, config.encoder_dim, config.utterance_hidden_dim
    d_a, d_s = config.interlocutor_dim, config.decoder_dim
    return {
        "enc_fwd": (d_e, d_w),
        "enc_bwd": (d_e, d_w),
        "gru_spk": (d_a, d_u),
        "gru_adr": (d_a, d_u),
        "gru_obs": (d_a, d_u),
        "gru_dec": (d_s, d_u + 2 * d_a + d_w),
    }


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """
    Name -> shape of every trainable parameter for ``config``.

    The prediction heads exist only when joint prediction is enabled.
    """
    V = _vocab_size(config)
    d_w, d_u = config.word_dim, config.utterance_hidden_dim
    d_a, d_s = config.interlocutor_dim, config.decoder_dim

    shapes: Dict[str, Tuple[int, ...]] = {"embedding": (V, d_w)}
    for block, (hidden, inputs) in gru_dims(config).items():
        for gate, shape in GruParams.shapes(hidden, inputs).items():
            shapes[f"{block}.{gate}"] = shape
    shapes["attn.W_a"] = (d_s, d_u)
    shapes["init.W"] = (d_s, 2 * d_a)
    shapes["out.W_proj"] = (d_w, d_s + d_u + 2 * d_a)
    shapes["out.b_proj"] = (d_w,)
    if config.joint_prediction:
        shapes["pred_spk.W"] = (d_a + d_u, d_a)
        shapes["pred_adr.W"] = (d_a + d_u, d_a)
    return shapes


class ModelParams:
    """
    Every weight as a named parameter Value.

    GRU blocks are exposed as ``GruParams`` attributes (``enc_fwd``, ...); the
    remaining matrices keep their dotted names in ``values``.
    """

    def __init__(self, config: ModelConfig, values: Mapping[str, Value]):
        expected = param_shapes(config)
        missing = sorted(set(expected) - set(values))
        extra = sorted(set(values) - set(expected))
        if missing or extra:
            raise DimensionError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if values[name].shape != shape:
                raise DimensionError(f"parameter {name} has shape {values[name].shape}, expected {shape}")

        self.config = config
        self.values: Dict[str, Value] = {name: values[name] for name in expected}
        for block in GRU_BLOCKS:
            setattr(self, block, GruParams(**{g: self.values[f"{block}.{g}"] for g in GATE_NAMES}))

    # --- named access ---
    @property
    def embedding(self) -> Value:
        return self.values["embedding"]

    @property
    def W_a(self) -> Value:
        return self.values["attn.W_a"]

    @property
    def W_init(self) -> Value:
        return self.values["init.W"]

    @property
    def W_proj(self) -> Value:
        return self.values["out.W_proj"]

    @property
    def b_proj(self) -> Value:
        return self.values["out.b_proj"]

    @property
    def W_pred_spk(self) -> Optional[Value]:
        return self.values.get("pred_spk.W")

    @property
    def W_pred_adr(self) -> Optional[Value]:
        return self.values.get("pred_adr.W")

    def __iter__(self) -> Iterator[Tuple[str, Value]]:
        return iter(self.values.items())

    def __len__(self) -> int:
        return len(self.values)

    @property
    def size(self) -> int:
        """Total number of scalar weights."""
        return sum(v.size for v in self.values.values())

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: v.data for name, v in self.values.items()}

    def assign(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Rebind parameter data from arrays (same names and shapes)."""
        for name, array in arrays.items():
            if name not in self.values:
                raise DimensionError(f"unknown parameter {name}")
            self.values[name].assign(array)

    def zero_grad(self) -> None:
        for v in self.values.values():
            v.zero_grad()

    def l2(self) -> Value:
        """Sum of squared weights over every parameter."""
        terms = [sum_squares(v) for v in self.values.values()]
        total = terms[0]
        for term in terms[1:]:
            total = total + term
        return total

    # --- construction ---
    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        return cls(config, {name: parameter(array, name) for name, array in arrays.items()})

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 13) -> "ModelParams":
        """
        Seeded uniform init in +-1/sqrt(fan_in); biases and the bias of the
        output projection start at zero.
        """
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in param_shapes(config).items():
            if len(shape) == 1:
                arrays[name] = np.zeros(shape)
            else:
                arrays[name] = uniform_init(rng, shape, fan_in=shape[1])
        return cls.from_arrays(config, arrays)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls.from_arrays(config, {name: np.zeros(shape) for name, shape in param_shapes(config).items()})


def load_word_vectors(path: Union[str, Path], vocab: Vocabulary, params: ModelParams) -> int:
    """
    Overwrite embedding rows from a plain-text ``word v1 ... vd`` file.

    Args:
        path: Vector file
        vocab: Vocabulary the embedding rows follow
        params: Parameters to update

    Returns:
        Number of rows replaced

    Raises:
        ConfigError: File missing, or a vector of the wrong dimension
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"Cannot read word vectors {path}: {e}") from e

    table = np.array(params.embedding.data)
    dim = table.shape[1]
    replaced = 0
    for line_no, line in enumerate(lines, 1):
        parts = line.rstrip().split(" ")
        if len(parts) < 2:
            continue
        word, numbers = parts[0], parts[1:]
        if len(numbers) != dim:
            raise ConfigError(f"{path}:{line_no}: vector of dimension {len(numbers)}, expected {dim}")
        if word in vocab:
            table[vocab.index(word)] = np.asarray(numbers, dtype=np.float64)
            replaced += 1
    params.embedding.assign(table)
    logger.info(f"Loaded {replaced} pre-trained word vectors from {path}")
    return replaced
