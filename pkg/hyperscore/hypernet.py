"""Hypernetwork and mapping head.

The hypernetwork turns a condition feature into the weights and biases of
a small fully connected mapping head. A shared affine transformation maps
f_c to a channels x grid x grid tensor; every head layer then owns a
weight generator and a bias generator. A layer whose weight count divides
by grid^2 gets its weight from a 3x3 convolution (padding 1) reshaped
row-major into (in x out); any other layer, and every bias, is produced
from the globally average-pooled tensor by an affine map.

With fixed heads the hypernetwork is bypassed and every condition owns a
directly learned head of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .const import DEFAULT_HYPER_CHANNELS, DEFAULT_HYPER_GRID
from .exceptions import ArgumentError, FeatureDataError
from .helpers import gelu, gelu_grad, require_positive

_LOGGER = logging.getLogger(__name__)

KERNEL = 3


@dataclass(frozen=True)
class HeadLayout:
    """Mapping-head widths and the hypernetwork grid."""

    head_dims: tuple[int, ...]
    channels: int = DEFAULT_HYPER_CHANNELS
    grid: int = DEFAULT_HYPER_GRID

    def __post_init__(self) -> None:
        """Validate the layout."""
        if len(self.head_dims) < 2:
            raise ArgumentError("mapping head needs at least one layer")
        if self.head_dims[-1] != 1:
            raise ArgumentError("mapping head must end in a single output")
        require_positive(channels=self.channels, grid=self.grid)
        if min(self.head_dims) < 1:
            raise ArgumentError(f"head widths must be >= 1, got {self.head_dims}")

    @property
    def layers(self) -> list[tuple[int, int]]:
        """(in, out) of every head layer."""
        return list(zip(self.head_dims[:-1], self.head_dims[1:]))

    @property
    def cells(self) -> int:
        """grid * grid."""
        return self.grid * self.grid

    @property
    def transform_size(self) -> int:
        """channels * grid * grid."""
        return self.channels * self.cells

    def conv_generated(self, layer: int) -> bool:
        """Whether a layer's weight comes from the convolution path."""
        in_dim, out_dim = self.layers[layer]
        return (in_dim * out_dim) % self.cells == 0

    def conv_channels(self, layer: int) -> int:
        """Convolution output channels for a conv-generated layer."""
        in_dim, out_dim = self.layers[layer]
        return in_dim * out_dim // self.cells


@dataclass
class MappingHeadParams:
    """Generated head parameters; weights are (in x out), optionally K-stacked."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """(weight shape, bias shape) per layer."""
        return [(w.shape, b.shape) for w, b in zip(self.weights, self.biases)]

    def condition(self, index: int) -> MappingHeadParams:
        """Parameters of one condition from a K-stacked set."""
        return MappingHeadParams(
            [w[index] for w in self.weights], [b[index] for b in self.biases]
        )


def init_hypernet(
    rng: np.random.Generator, dim: int, layout: HeadLayout
) -> dict[str, np.ndarray]:
    """Fan-in scaled weights, zero biases."""
    params = {
        "transform_w": rng.standard_normal((dim, layout.transform_size)) / np.sqrt(dim),
        "transform_b": np.zeros(layout.transform_size),
    }
    for layer, (in_dim, out_dim) in enumerate(layout.layers):
        prefix = f"fc{layer + 1}"
        if layout.conv_generated(layer):
            fan_in = layout.channels * KERNEL * KERNEL
            params[f"{prefix}_weight_conv_w"] = rng.standard_normal(
                (layout.conv_channels(layer), layout.channels, KERNEL, KERNEL)
            ) / np.sqrt(fan_in * in_dim)
            params[f"{prefix}_weight_conv_b"] = np.zeros(layout.conv_channels(layer))
        else:
            params[f"{prefix}_weight_fc_w"] = rng.standard_normal(
                (layout.channels, in_dim * out_dim)
            ) / np.sqrt(layout.channels * in_dim)
            params[f"{prefix}_weight_fc_b"] = np.zeros(in_dim * out_dim)
        params[f"{prefix}_bias_fc_w"] = rng.standard_normal(
            (layout.channels, out_dim)
        ) / np.sqrt(layout.channels)
        params[f"{prefix}_bias_fc_b"] = np.zeros(out_dim)
    return params


def _conv3x3(inputs: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.pad(inputs, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (KERNEL, KERNEL), axis=(2, 3))
    out = np.einsum("kcxyij,ocij->koxy", windows, kernel) + bias[None, :, None, None]
    return out, windows


def _conv3x3_backward(
    windows: np.ndarray, kernel: np.ndarray, grad: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    grad_kernel = np.einsum("kcxyij,koxy->ocij", windows, grad)
    grad_bias = grad.sum(axis=(0, 2, 3))
    padded = np.pad(grad, ((0, 0), (0, 0), (1, 1), (1, 1)))
    grad_windows = sliding_window_view(padded, (KERNEL, KERNEL), axis=(2, 3))
    grad_inputs = np.einsum(
        "koxyij,ocij->kcxy", grad_windows, kernel[:, :, ::-1, ::-1]
    )
    return grad_inputs, grad_kernel, grad_bias


def hypernet_forward(
    conditions: np.ndarray, params: dict[str, np.ndarray], layout: HeadLayout
) -> tuple[MappingHeadParams, tuple]:
    """K-stacked head parameters for K condition features."""
    if conditions.ndim != 2 or conditions.shape[1] != params["transform_w"].shape[0]:
        raise ArgumentError(
            f"conditions {conditions.shape} do not match transform "
            f"{params['transform_w'].shape}"
        )
    if not np.isfinite(conditions).all():
        raise FeatureDataError("non-finite condition feature")
    num = conditions.shape[0]
    grid = (conditions @ params["transform_w"] + params["transform_b"]).reshape(
        num, layout.channels, layout.grid, layout.grid
    )
    pooled = grid.mean(axis=(2, 3))
    weights, biases, windows = [], [], []
    for layer, (in_dim, out_dim) in enumerate(layout.layers):
        prefix = f"fc{layer + 1}"
        if layout.conv_generated(layer):
            out, window = _conv3x3(
                grid, params[f"{prefix}_weight_conv_w"], params[f"{prefix}_weight_conv_b"]
            )
            weights.append(out.reshape(num, in_dim, out_dim))
            windows.append(window)
        else:
            flat = pooled @ params[f"{prefix}_weight_fc_w"] + params[f"{prefix}_weight_fc_b"]
            weights.append(flat.reshape(num, in_dim, out_dim))
            windows.append(None)
        biases.append(pooled @ params[f"{prefix}_bias_fc_w"] + params[f"{prefix}_bias_fc_b"])
    return MappingHeadParams(weights, biases), (conditions, pooled, windows)


def hypernet_backward(
    cache: tuple,
    grad_head: MappingHeadParams,
    params: dict[str, np.ndarray],
    layout: HeadLayout,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Gradients of the conditions and hypernetwork given head-parameter gradients."""
    conditions, pooled, windows = cache
    num = conditions.shape[0]
    grads: dict[str, np.ndarray] = {}
    grad_grid = np.zeros((num, layout.channels, layout.grid, layout.grid), dtype=pooled.dtype)
    grad_pooled = np.zeros_like(pooled)
    for layer, (in_dim, out_dim) in enumerate(layout.layers):
        prefix = f"fc{layer + 1}"
        grad_weight = grad_head.weights[layer]
        if layout.conv_generated(layer):
            grad_out = grad_weight.reshape(num, -1, layout.grid, layout.grid)
            grad_in, grad_kernel, grad_bias = _conv3x3_backward(
                windows[layer], params[f"{prefix}_weight_conv_w"], grad_out
            )
            grad_grid += grad_in
            grads[f"{prefix}_weight_conv_w"] = grad_kernel
            grads[f"{prefix}_weight_conv_b"] = grad_bias
        else:
            grad_flat = grad_weight.reshape(num, in_dim * out_dim)
            grads[f"{prefix}_weight_fc_w"] = pooled.T @ grad_flat
            grads[f"{prefix}_weight_fc_b"] = grad_flat.sum(axis=0)
            grad_pooled += grad_flat @ params[f"{prefix}_weight_fc_w"].T
        grad_bias_out = grad_head.biases[layer]
        grads[f"{prefix}_bias_fc_w"] = pooled.T @ grad_bias_out
        grads[f"{prefix}_bias_fc_b"] = grad_bias_out.sum(axis=0)
        grad_pooled += grad_bias_out @ params[f"{prefix}_bias_fc_w"].T
    grad_grid += grad_pooled[:, :, None, None] / layout.cells
    grad_flat = grad_grid.reshape(num, layout.transform_size)
    grads["transform_w"] = conditions.T @ grad_flat
    grads["transform_b"] = grad_flat.sum(axis=0)
    return grad_flat @ params["transform_w"].T, grads


def init_fixed_heads(
    rng: np.random.Generator, num_conditions: int, layout: HeadLayout
) -> dict[str, np.ndarray]:
    """One directly learned head per condition, no hypernetwork."""
    require_positive(K=num_conditions)
    params = {}
    for layer, (in_dim, out_dim) in enumerate(layout.layers):
        params[f"head{layer + 1}_w"] = rng.standard_normal(
            (num_conditions, in_dim, out_dim)
        ) / np.sqrt(in_dim)
        params[f"head{layer + 1}_b"] = np.zeros((num_conditions, out_dim))
    return params


def fixed_heads(
    conditions: np.ndarray, params: dict[str, np.ndarray], layout: HeadLayout
) -> tuple[MappingHeadParams, np.ndarray]:
    """K-stacked head parameters read straight from params; conditions only set K."""
    num = conditions.shape[0]
    weights = [params[f"head{layer + 1}_w"] for layer in range(len(layout.layers))]
    biases = [params[f"head{layer + 1}_b"] for layer in range(len(layout.layers))]
    if weights[0].shape[0] != num:
        raise ArgumentError(f"{weights[0].shape[0]} fixed heads for {num} conditions")
    return MappingHeadParams(weights, biases), conditions


def fixed_heads_backward(
    cache: np.ndarray, grad_head: MappingHeadParams
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Head gradients map one to one; the conditions get none."""
    grads = {}
    for layer, (weight, bias) in enumerate(zip(grad_head.weights, grad_head.biases)):
        grads[f"head{layer + 1}_w"] = weight
        grads[f"head{layer + 1}_b"] = bias
    return np.zeros_like(cache), grads


def generate_params(
    condition: np.ndarray, params: dict[str, np.ndarray], layout: HeadLayout
) -> MappingHeadParams:
    """Mapping-head parameters for one condition feature."""
    head, _ = hypernet_forward(np.asarray(condition)[None, :], params, layout)
    return head.condition(0)


def head_forward(
    features: np.ndarray, head: MappingHeadParams
) -> tuple[np.ndarray, list]:
    """Scores for K quality features, each through its own generated head."""
    if features.shape[-1] != head.weights[0].shape[-2]:
        raise ArgumentError(
            f"quality feature size {features.shape[-1]} != head input "
            f"{head.weights[0].shape[-2]}"
        )
    activations = features
    cache = []
    last = len(head.weights) - 1
    for layer, (weight, bias) in enumerate(zip(head.weights, head.biases)):
        pre = np.einsum("ki,kio->ko", activations, weight) + bias
        cache.append((activations, pre))
        activations = pre if layer == last else gelu(pre)
    return activations[:, 0], cache


def head_backward(
    cache: list, grad_scores: np.ndarray, head: MappingHeadParams
) -> tuple[np.ndarray, MappingHeadParams]:
    """Gradients of the quality features and of the generated parameters."""
    grad = grad_scores[:, None]
    weight_grads: list[np.ndarray] = [None] * len(head.weights)  # type: ignore[list-item]
    bias_grads: list[np.ndarray] = [None] * len(head.weights)  # type: ignore[list-item]
    last = len(head.weights) - 1
    for layer in range(last, -1, -1):
        inputs, pre = cache[layer]
        grad_pre = grad if layer == last else grad * gelu_grad(pre)
        weight_grads[layer] = np.einsum("ki,ko->kio", inputs, grad_pre)
        bias_grads[layer] = grad_pre
        grad = np.einsum("ko,kio->ki", grad_pre, head.weights[layer])
    return grad, MappingHeadParams(weight_grads, bias_grads)


def mapping_forward(feature: np.ndarray, head: MappingHeadParams) -> float:
    """Raw score of one quality feature under one set of head parameters."""
    if feature.ndim != 1 or feature.shape[0] != head.weights[0].shape[0]:
        raise ArgumentError(
            f"quality feature of shape {feature.shape} does not fit head input "
            f"{head.weights[0].shape[0]}"
        )
    stacked = MappingHeadParams(
        [w[None] for w in head.weights], [b[None] for b in head.biases]
    )
    scores, _ = head_forward(feature[None, :], stacked)
    return float(scores[0])
