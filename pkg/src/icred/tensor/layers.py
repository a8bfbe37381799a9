"""
Gated recurrent unit cell and weight initialization.

Gate convention (Cho et al. form):
    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~
"""

from dataclasses import dataclass, fields
from typing import Dict, Iterator, Tuple

import numpy as np
from scipy import special

from icred.errors import DimensionError
from icred.tensor.autodiff import Value, parameter

GATE_NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class GruParams:
    """Weights of one GRU cell; every field is a parameter Value."""

    W_z: Value
    W_r: Value
    W_h: Value
    U_z: Value
    U_r: Value
    U_h: Value
    b_z: Value
    b_r: Value
    b_h: Value

    def __post_init__(self):
        hidden, inputs = self.W_z.shape
        for name in ("W_z", "W_r", "W_h"):
            if getattr(self, name).shape != (hidden, inputs):
                raise DimensionError(f"{name} must be {(hidden, inputs)}, got {getattr(self, name).shape}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (hidden, hidden):
                raise DimensionError(f"{name} must be {(hidden, hidden)}, got {getattr(self, name).shape}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (hidden,):
                raise DimensionError(f"{name} must be {(hidden,)}, got {getattr(self, name).shape}")

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    @classmethod
    def shapes(cls, hidden: int, inputs: int) -> Dict[str, Tuple[int, ...]]:
        return {
            **{name: (hidden, inputs) for name in ("W_z", "W_r", "W_h")},
            **{name: (hidden, hidden) for name in ("U_z", "U_r", "U_h")},
            **{name: (hidden,) for name in ("b_z", "b_r", "b_h")},
        }

    @classmethod
    def from_arrays(cls, prefix: str, arrays: Dict[str, np.ndarray]) -> "GruParams":
        return cls(**{name: parameter(arrays[name], f"{prefix}.{name}") for name in GATE_NAMES})

    @classmethod
    def initialize(cls, prefix: str, hidden: int, inputs: int, rng: np.random.Generator) -> "GruParams":
        """
        Seeded uniform initialization; biases start at zero.

        Args:
            prefix: Name prefix (``enc_fwd`` gives ``enc_fwd.W_z`` ...)
            hidden: Hidden size
            inputs: Input size
            rng: Source of randomness
        """
        arrays = {}
        for name, shape in cls.shapes(hidden, inputs).items():
            if name.startswith("b_"):
                arrays[name] = np.zeros(shape)
            else:
                arrays[name] = uniform_init(rng, shape, fan_in=shape[1])
        return cls.from_arrays(prefix, arrays)

    def named(self) -> Iterator[Tuple[str, Value]]:
        for f in fields(self):
            yield f.name, getattr(self, f.name)


def gru_step(params: GruParams, h: Value, x: Value) -> Value:
    """
    One GRU transition as a single tape node with an analytic backward rule.

    Args:
        params: Cell weights
        h: Previous hidden state (hidden_size,)
        x: Input vector (input_size,)

    Returns:
        Next hidden state

    Raises:
        DimensionError: ``h`` or ``x`` has the wrong length
    """
    if x.shape != (params.input_size,):
        raise DimensionError(f"GRU input must have length {params.input_size}, got {x.shape}")
    if h.shape != (params.hidden_size,):
        raise DimensionError(f"GRU state must have length {params.hidden_size}, got {h.shape}")

    Wz, Wr, Wh = params.W_z.data, params.W_r.data, params.W_h.data
    Uz, Ur, Uh = params.U_z.data, params.U_r.data, params.U_h.data
    xv, hv = x.data, h.data

    z = special.expit(Wz @ xv + Uz @ hv + params.b_z.data)
    r = special.expit(Wr @ xv + Ur @ hv + params.b_r.data)
    rh = r * hv
    cand = np.tanh(Wh @ xv + Uh @ rh + params.b_h.data)
    out = (1.0 - z) * hv + z * cand

    def backward(g):
        d_cand = g * z
        d_h = g * (1.0 - z)

        a_h = d_cand * (1.0 - cand * cand)
        d_rh = Uh.T @ a_h
        d_h = d_h + d_rh * r

        a_z = g * (cand - hv) * z * (1.0 - z)
        a_r = d_rh * hv * r * (1.0 - r)

        d_x = Wz.T @ a_z + Wr.T @ a_r + Wh.T @ a_h
        d_h = d_h + Uz.T @ a_z + Ur.T @ a_r
        return (
            d_x, d_h,
            np.outer(a_z, xv), np.outer(a_r, xv), np.outer(a_h, xv),
            np.outer(a_z, hv), np.outer(a_r, hv), np.outer(a_h, rh),
            a_z, a_r, a_h,
        )

    parents = (x, h, params.W_z, params.W_r, params.W_h, params.U_z, params.U_r, params.U_h,
               params.b_z, params.b_r, params.b_h)
    return Value.from_op(out, parents, "gru_step", backward)
