"""
Adam optimizer.

``adam_step`` is the pure update on arrays; ``Adam`` owns one ``AdamState``
per named parameter and rebinds parameter data after each step.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from icred.errors import DimensionError
from icred.tensor.autodiff import Value, make_tensor


@dataclass
class AdamState:
    """Moment estimates for a single parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), **hyper)


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray) -> Tuple[np.ndarray, AdamState]:
    """
    Bias-corrected Adam update.

    Args:
        state: Current moments and step count
        param: Parameter values
        grad: Gradient of the loss w.r.t. ``param``

    Returns:
        (new parameter array, new state); the inputs are left untouched

    Raises:
        DimensionError: Shapes disagree
    """
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise DimensionError(f"adam_step shapes differ: param {param.shape}, grad {grad.shape}, m {state.m.shape}")

    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_param = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)

    new_state = AdamState(m=m, v=v, step=step, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_param, new_state


@dataclass
class Adam:
    """Adam over a fixed set of named parameters."""

    params: Mapping[str, Value]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: Dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            if name not in self.states:
                self.states[name] = AdamState.zeros_like(
                    p.data, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps
                )

    def step(self, grads: Optional[Mapping[str, np.ndarray]] = None) -> None:
        """
        Apply one update to every parameter.

        Args:
            grads: Gradients by name; defaults to each parameter's accumulated grad
        """
        for name, p in self.params.items():
            grad = p.grad if grads is None else grads.get(name, np.zeros_like(p.data))
            new_param, self.states[name] = adam_step(self.states[name], p.data, grad)
            p.assign(new_param)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Moments flattened to ``adam.m.<name>`` / ``adam.v.<name>`` arrays."""
        out = {}
        for name, s in self.states.items():
            out[f"adam.m.{name}"] = s.m
            out[f"adam.v.{name}"] = s.v
        return out

    def load_state(self, arrays: Mapping[str, np.ndarray], step: int) -> None:
        """Restore moments saved by ``state_arrays``."""
        for name, s in self.states.items():
            try:
                m = make_tensor(arrays[f"adam.m.{name}"])
                v = make_tensor(arrays[f"adam.v.{name}"])
            except KeyError as e:
                raise DimensionError(f"optimizer state missing for {name}") from e
            if m.shape != s.m.shape or v.shape != s.v.shape:
                raise DimensionError(f"optimizer state shape mismatch for {name}")
            self.states[name] = AdamState(m=np.array(m), v=np.array(v), step=step, lr=s.lr,
                                          beta1=s.beta1, beta2=s.beta2, eps=s.eps)
