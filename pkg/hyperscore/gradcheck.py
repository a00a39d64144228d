"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
import logging

import numpy as np

from .conditions import default_dimension_names
from .const import (
    GRADCHECK_FLOOR,
    GRADCHECK_STEP_F32,
    GRADCHECK_STEP_F64,
    GRADCHECK_TOL_F32,
    GRADCHECK_TOL_F64,
)
from .exceptions import ArgumentError
from .features import synth_toy_bundle
from .helpers import philox
from .model import HyperScoreModel, ModelLayout, ModelParams
from .training import LabeledSample, TrainConfig, backward, compute_loss

_LOGGER = logging.getLogger(__name__)

PRECISION_F64 = "f64"
PRECISION_F32 = "f32"
PRECISIONS = {
    PRECISION_F64: (np.float64, GRADCHECK_STEP_F64, GRADCHECK_TOL_F64),
    PRECISION_F32: (np.float32, GRADCHECK_STEP_F32, GRADCHECK_TOL_F32),
}

TINY_DIMS = (2, 4, 3, 16)


def tiny_layout(like: ModelLayout | None = None) -> ModelLayout:
    """Small layout that exercises both hypernetwork paths (about 860 values).

    Ablation switches are copied from ``like`` when given.
    """
    switches = {}
    if like is not None:
        switches = {
            "aggregation": like.aggregation,
            "use_meta_tokens": like.use_meta_tokens,
            "conditional_fusion": like.conditional_fusion,
            "hyper_heads": like.hyper_heads,
        }
    return ModelLayout(
        dim=16,
        quality_dim=8,
        dimension_names=tuple(default_dimension_names(3)),
        prompt_tokens=2,
        hyper_channels=2,
        hyper_grid=2,
        **switches,
    )


def tiny_samples(seed: int, count: int, layout: ModelLayout) -> list[LabeledSample]:
    """Toy bundles with targets in [0, 1]."""
    dims = (*TINY_DIMS[:3], layout.dim)
    rng = philox(seed, 0x7A)
    return [
        LabeledSample(
            synth_toy_bundle(seed + i, dims, prompt_id=f"p{i}"),
            rng.uniform(0.0, 1.0, layout.num_conditions),
        )
        for i in range(count)
    ]


@dataclass
class GroupResult:
    """Worst relative error within one parameter group."""

    group: str
    worst_error: float
    worst_tensor: str
    entries: int


@dataclass
class GradCheckReport:
    """Per-group outcome of a gradient check."""

    precision: str
    tolerance: float
    groups: list[GroupResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """Whether every group is below the tolerance."""
        return all(result.worst_error < self.tolerance for result in self.groups)

    @property
    def worst_error(self) -> float:
        """Largest relative error over all groups."""
        return max((result.worst_error for result in self.groups), default=0.0)

    def rows(self) -> list[dict]:
        """Table rows for reporting."""
        return [
            {
                "group": result.group,
                "tensor": result.worst_tensor,
                "entries": result.entries,
                "worst_relative_error": result.worst_error,
                "passed": result.worst_error < self.tolerance,
            }
            for result in self.groups
        ]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor)."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRADCHECK_FLOOR)
    return np.abs(analytic - numeric) / scale


def check_gradients(
    model: HyperScoreModel,
    samples: Sequence[LabeledSample],
    config: TrainConfig,
    precision: str = PRECISION_F64,
    grad_hook: Callable[[ModelParams], ModelParams] | None = None,
) -> GradCheckReport:
    """Compare backward() against central differences for every trainable entry."""
    if precision not in PRECISIONS:
        raise ArgumentError(f"unknown precision {precision}, expected one of {list(PRECISIONS)}")
    dtype, step, tolerance = PRECISIONS[precision]
    work = model.astype(dtype)
    _, grads = backward(samples, work, config)
    if grad_hook is not None:
        grads = grad_hook(grads)
    report = GradCheckReport(precision, tolerance)
    worst: dict[str, GroupResult] = {}
    for group, name, tensor in work.params.named():
        analytic = grads.groups[group][name].astype(np.float64).ravel()
        numeric = np.empty(tensor.size)
        flat = tensor.reshape(-1)
        for index in range(tensor.size):
            original = flat[index]
            flat[index] = original + step
            plus = compute_loss(samples, work, config).total
            flat[index] = original - step
            minus = compute_loss(samples, work, config).total
            flat[index] = original
            numeric[index] = (plus - minus) / (2.0 * step)
        errors = relative_error(analytic, numeric)
        current = worst.setdefault(group, GroupResult(group, 0.0, name, 0))
        current.entries += tensor.size
        if errors.size and errors.max() >= current.worst_error:
            current.worst_error = float(errors.max())
            current.worst_tensor = name
        _LOGGER.debug("%s.%s: worst relative error %.3e", group, name, errors.max(initial=0.0))
    report.groups = list(worst.values())
    _LOGGER.info(
        "Gradient check (%s): worst %.3e against %.0e", precision, report.worst_error, tolerance
    )
    return report
