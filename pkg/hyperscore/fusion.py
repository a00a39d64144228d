"""Conditional feature fusion.

Patches are weighted by how strongly they correlate with the text tokens
that matter for a condition, and the fused visual feature is merged with
the EOT text feature into a D_q quality feature.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from .const import (
    AGGREGATION_ADD,
    AGGREGATION_CONCAT,
    AGGREGATION_MULTIPLY,
    AGGREGATIONS,
)
from .exceptions import ArgumentError, DegenerateFeatureError
from .features import FeatureBundle, concat_views
from .helpers import gelu, gelu_grad, softmax, softmax_backward

_LOGGER = logging.getLogger(__name__)

NORM_FLOOR = 1e-12
ACTIVATION_GELU = "gelu"
ACTIVATION_LINEAR = "linear"


@dataclass
class MLPParams:
    """Two affine layers in -> hidden -> D_q, activation after the first."""

    w1: np.ndarray  # in x hidden
    b1: np.ndarray
    w2: np.ndarray  # hidden x D_q
    b2: np.ndarray
    activation: str = ACTIVATION_GELU

    @classmethod
    def from_group(
        cls, group: dict[str, np.ndarray], activation: str = ACTIVATION_GELU
    ) -> MLPParams:
        """Build from a parameter group."""
        return cls(group["w1"], group["b1"], group["w2"], group["b2"], activation)

    @property
    def in_dim(self) -> int:
        """Input size."""
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        """D_q."""
        return self.w2.shape[1]


def init_fusion_mlp(
    rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int
) -> dict[str, np.ndarray]:
    """Fan-in scaled Gaussian weights, zero biases."""
    return {
        "w1": rng.standard_normal((in_dim, hidden)) / np.sqrt(in_dim),
        "b1": np.zeros(hidden),
        "w2": rng.standard_normal((hidden, out_dim)) / np.sqrt(hidden),
        "b2": np.zeros(out_dim),
    }


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """L2-normalize each row; near-zero rows are rejected."""
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise DegenerateFeatureError("cannot normalize a near-zero feature row")
    return matrix / norms


def correlation_v2t(visual: np.ndarray, text: np.ndarray) -> np.ndarray:
    """Patch-to-token correlation matrix (MN_v x N_t)."""
    if visual.shape[-1] != text.shape[-1]:
        raise ArgumentError(
            f"visual dim {visual.shape[-1]} != text dim {text.shape[-1]}"
        )
    return visual @ text.T


def correlation_t2c(text: np.ndarray, condition: np.ndarray) -> np.ndarray:
    """Token-to-condition correlation (N_t, or N_t x K for stacked conditions)."""
    if text.shape[-1] != condition.shape[-1]:
        raise ArgumentError(
            f"text dim {text.shape[-1]} != condition dim {condition.shape[-1]}"
        )
    return text @ condition.T


def fuse_conditional(
    i_v2t: np.ndarray, i_t2c: np.ndarray, visual: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Softmax patch weights and the weighted sum of the raw patch features."""
    if i_v2t.shape[0] != visual.shape[0] or i_v2t.shape[1] != i_t2c.shape[0]:
        raise ArgumentError(
            f"inconsistent shapes {i_v2t.shape}, {i_t2c.shape}, {visual.shape}"
        )
    weights = softmax(i_v2t @ i_t2c, axis=0)
    return weights, weights.T @ visual


def aggregate(fused: np.ndarray, eot: np.ndarray, aggregation: str) -> np.ndarray:
    """Merge the fused visual feature with the EOT feature."""
    if fused.shape[-1] != eot.shape[-1]:
        raise ArgumentError(f"fused dim {fused.shape[-1]} != eot dim {eot.shape[-1]}")
    if aggregation == AGGREGATION_MULTIPLY:
        return fused * eot
    if aggregation == AGGREGATION_ADD:
        return fused + eot
    if aggregation == AGGREGATION_CONCAT:
        return np.concatenate((fused, np.broadcast_to(eot, fused.shape)), axis=-1)
    raise ArgumentError(f"unknown aggregation {aggregation}, expected one of {AGGREGATIONS}")


def _aggregate_backward(
    grad: np.ndarray, eot: np.ndarray, aggregation: str
) -> np.ndarray:
    if aggregation == AGGREGATION_MULTIPLY:
        return grad * eot
    if aggregation == AGGREGATION_ADD:
        return grad
    return grad[..., : eot.shape[-1]]


def _mlp_forward(inputs: np.ndarray, mlp: MLPParams) -> tuple[np.ndarray, tuple]:
    if inputs.shape[-1] != mlp.in_dim:
        raise ArgumentError(f"MLP expects {mlp.in_dim} inputs, got {inputs.shape[-1]}")
    pre = inputs @ mlp.w1 + mlp.b1
    hidden = gelu(pre) if mlp.activation == ACTIVATION_GELU else pre
    return hidden @ mlp.w2 + mlp.b2, (inputs, pre, hidden)


def _mlp_backward(
    cache: tuple, grad: np.ndarray, mlp: MLPParams
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    inputs, pre, hidden = cache
    grad_hidden = grad @ mlp.w2.T
    grad_pre = grad_hidden * gelu_grad(pre) if mlp.activation == ACTIVATION_GELU else grad_hidden
    grads = {
        "w1": inputs.T @ grad_pre,
        "b1": grad_pre.sum(axis=0),
        "w2": hidden.T @ grad,
        "b2": grad.sum(axis=0),
    }
    return grad_pre @ mlp.w1.T, grads


def quality_feature(
    fused: np.ndarray,
    eot: np.ndarray,
    mlp: MLPParams,
    aggregation: str = AGGREGATION_MULTIPLY,
) -> np.ndarray:
    """MLP(f_vc (.) f_t^eot), or the add/concat variants."""
    merged = aggregate(np.atleast_2d(fused), eot, aggregation)
    out, _ = _mlp_forward(merged, mlp)
    return out[0] if np.ndim(fused) == 1 else out


@dataclass
class SampleContext:
    """Parameter-independent per-sample quantities."""

    visual: np.ndarray  # MN_v x D, raw
    text_normalized: np.ndarray  # N_t x D
    i_v2t: np.ndarray  # MN_v x N_t
    eot: np.ndarray  # D, raw


def sample_context(bundle: FeatureBundle, dtype: np.dtype | type = np.float32) -> SampleContext:
    """Normalize and correlate a bundle's features once."""
    visual = concat_views(bundle).astype(dtype)
    text = bundle.text_tokens.astype(dtype)
    text_normalized = normalize_rows(text)
    i_v2t = correlation_v2t(normalize_rows(visual), text_normalized)
    return SampleContext(visual, text_normalized, i_v2t, text[bundle.eot_index])


def fusion_forward(
    context: SampleContext,
    conditions: np.ndarray,
    mlp: MLPParams,
    aggregation: str = AGGREGATION_MULTIPLY,
    conditional: bool = True,
) -> tuple[np.ndarray, tuple]:
    """Quality features K x D_q for all conditions of one sample."""
    norms = np.linalg.norm(conditions, axis=1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise DegenerateFeatureError("condition feature is near zero")
    unit = conditions / norms
    num_patches = context.visual.shape[0]
    if conditional:
        weights, fused = fuse_conditional(
            context.i_v2t, correlation_t2c(context.text_normalized, unit), context.visual
        )
    else:
        weights = np.full((num_patches, conditions.shape[0]), 1.0 / num_patches, dtype=conditions.dtype)
        fused = weights.T @ context.visual
    merged = aggregate(fused, context.eot, aggregation)
    features, mlp_cache = _mlp_forward(merged, mlp)
    return features, (unit, norms, weights, mlp_cache, conditional, aggregation)


def fusion_backward(
    context: SampleContext, cache: tuple, grad: np.ndarray, mlp: MLPParams
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Gradients of the conditions and the MLP given the quality-feature gradient."""
    unit, norms, weights, mlp_cache, conditional, aggregation = cache
    grad_merged, mlp_grads = _mlp_backward(mlp_cache, grad, mlp)
    if not conditional:
        return np.zeros_like(unit), mlp_grads
    grad_fused = _aggregate_backward(grad_merged, context.eot, aggregation)
    grad_weights = context.visual @ grad_fused.T
    grad_logits = softmax_backward(weights, grad_weights, axis=0)
    grad_unit = (context.i_v2t.T @ grad_logits).T @ context.text_normalized
    radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
    return (grad_unit - unit * radial) / norms, mlp_grads
