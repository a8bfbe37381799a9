"""
Finite-difference gradient verification.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from icred.errors import ContractError
from icred.tensor.autodiff import Value, backward

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Worst relative error per parameter plus every coordinate above tolerance."""

    tolerance: float
    max_error: Dict[str, float] = field(default_factory=dict)
    flagged: List[Tuple[str, Tuple[int, ...], float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flagged

    @property
    def worst(self) -> float:
        return max(self.max_error.values(), default=0.0)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def grad_check(
    loss_fn: Callable[[], Value],
    params: Mapping[str, Value],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_coords_per_param: Optional[int] = None,
    seed: int = 0
) -> GradCheckReport:
    """
    Compare analytic gradients against central differences.

    Args:
        loss_fn: Builds a fresh scalar loss from the current parameter data
        params: Parameters to check, by name
        tolerance: Relative error above which a coordinate is flagged
        step: Finite-difference step
        max_coords_per_param: Sample at most this many coordinates per parameter
        seed: Sampling seed

    Returns:
        GradCheckReport

    Raises:
        ContractError: ``loss_fn`` is not deterministic
    """
    first = loss_fn()
    if loss_fn().item() != first.item():
        raise ContractError("loss function is not deterministic; seed its randomness")
    analytic = backward(first, accumulate=False)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)

    for name, p in params.items():
        grad = analytic.get(name, np.zeros_like(p.data))
        coords = list(np.ndindex(p.shape))
        if max_coords_per_param is not None and len(coords) > max_coords_per_param:
            picks = rng.choice(len(coords), size=max_coords_per_param, replace=False)
            coords = [coords[i] for i in sorted(picks)]

        original = p.data
        worst = 0.0
        for idx in coords:
            bumped = np.array(original)
            bumped[idx] = original[idx] + step
            p.assign(bumped)
            plus = loss_fn().item()
            bumped[idx] = original[idx] - step
            p.assign(bumped)
            minus = loss_fn().item()
            p.assign(original)

            numeric = (plus - minus) / (2.0 * step)
            err = relative_error(float(grad[idx]), numeric)
            worst = max(worst, err)
            if err > tolerance:
                report.flagged.append((name, tuple(int(i) for i in idx), float(grad[idx]), numeric))
        report.max_error[name] = worst

    if report.flagged:
        logger.warning(f"Gradient check flagged {len(report.flagged)} coordinates (worst {report.worst:.3g})")
    return report
