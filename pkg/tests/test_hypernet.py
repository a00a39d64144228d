"""Hypernetwork and mapping head tests."""
from __future__ import annotations

import numpy as np
import pytest

from hyperscore.exceptions import ArgumentError, FeatureDataError
from hyperscore.helpers import gelu
from hyperscore.hypernet import (
    HeadLayout,
    MappingHeadParams,
    generate_params,
    hypernet_forward,
    init_hypernet,
    mapping_forward,
)


def _conv_oracle(grid: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    channels, size, _ = grid.shape
    padded = np.zeros((channels, size + 2, size + 2))
    padded[:, 1:-1, 1:-1] = grid
    out = np.zeros((kernel.shape[0], size, size))
    for o in range(kernel.shape[0]):
        for x in range(size):
            for y in range(size):
                total = bias[o]
                for c in range(channels):
                    for i in range(3):
                        for j in range(3):
                            total += padded[c, x + i, y + j] * kernel[o, c, i, j]
                out[o, x, y] = total
    return out


def test_layout() -> None:
    """Test layout validation and generation paths."""
    layout = HeadLayout((224, 112, 56, 28, 1))
    assert layout.transform_size == 5488
    assert [layout.conv_generated(i) for i in range(4)] == [True, True, True, False]
    assert [layout.conv_channels(i) for i in range(3)] == [512, 128, 32]
    with pytest.raises(ArgumentError):
        HeadLayout((4, 2))
    with pytest.raises(ArgumentError):
        HeadLayout((4,))
    with pytest.raises(ArgumentError):
        HeadLayout((4, 0, 1))
    with pytest.raises(ArgumentError):
        HeadLayout((4, 1), channels=0)


def test_full_scale_shapes() -> None:
    """Test a 512-wide condition generates a 224-112-56-28-1 head."""
    layout = HeadLayout((224, 112, 56, 28, 1))
    params = init_hypernet(np.random.default_rng(0), 512, layout)
    assert params["transform_w"].shape == (512, 5488)
    head = generate_params(np.random.default_rng(1).standard_normal(512), params, layout)
    assert head.shapes == [
        ((224, 112), (112,)),
        ((112, 56), (56,)),
        ((56, 28), (28,)),
        ((28, 1), (1,)),
    ]
    assert np.isfinite(mapping_forward(np.ones(224), head))


def test_tiny_oracle() -> None:
    """Test generation against a loop evaluation of the declared formula."""
    layout = HeadLayout((4, 2, 1), channels=2, grid=2)
    rng = np.random.default_rng(5)
    params = {
        name: rng.standard_normal(tensor.shape)
        for name, tensor in init_hypernet(rng, 8, layout).items()
    }
    condition = rng.standard_normal(8)
    head = generate_params(condition, params, layout)

    grid = (condition @ params["transform_w"] + params["transform_b"]).reshape(2, 2, 2)
    pooled = grid.mean(axis=(1, 2))
    conv = _conv_oracle(grid, params["fc1_weight_conv_w"], params["fc1_weight_conv_b"])
    np.testing.assert_allclose(head.weights[0], conv.reshape(4, 2))
    np.testing.assert_allclose(
        head.biases[0], pooled @ params["fc1_bias_fc_w"] + params["fc1_bias_fc_b"]
    )
    np.testing.assert_allclose(
        head.weights[1],
        (pooled @ params["fc2_weight_fc_w"] + params["fc2_weight_fc_b"]).reshape(2, 1),
    )
    np.testing.assert_allclose(
        head.biases[1], pooled @ params["fc2_bias_fc_w"] + params["fc2_bias_fc_b"]
    )


def test_zero_condition() -> None:
    """Test a zero condition leaves only the generator biases."""
    layout = HeadLayout((4, 2, 1), channels=2, grid=2)
    rng = np.random.default_rng(6)
    params = init_hypernet(rng, 8, layout)
    zero = generate_params(np.zeros(8), params, layout)
    for tensor in zero.weights + zero.biases:
        np.testing.assert_array_equal(tensor, 0.0)

    params["fc2_bias_fc_b"] = np.array([0.75])
    params["fc1_weight_conv_b"] = np.array([1.0, -1.0])
    zero = generate_params(np.zeros(8), params, layout)
    np.testing.assert_array_equal(zero.biases[1], [0.75])
    np.testing.assert_array_equal(zero.weights[0][:2], [[1.0, 1.0], [1.0, 1.0]])
    np.testing.assert_array_equal(zero.weights[0][2:], [[-1.0, -1.0], [-1.0, -1.0]])


def test_affine_in_condition() -> None:
    """Test generated parameters are affine in the condition feature."""
    layout = HeadLayout((4, 2, 1), channels=2, grid=2)
    rng = np.random.default_rng(7)
    params = {
        name: rng.standard_normal(tensor.shape)
        for name, tensor in init_hypernet(rng, 8, layout).items()
    }
    a, b = rng.standard_normal(8), rng.standard_normal(8)
    base = generate_params(np.zeros(8), params, layout)
    left = generate_params(a, params, layout)
    right = generate_params(b, params, layout)
    both = generate_params(a + b, params, layout)
    for key in range(2):
        np.testing.assert_allclose(
            both.weights[key] - base.weights[key],
            (left.weights[key] - base.weights[key]) + (right.weights[key] - base.weights[key]),
            atol=1e-10,
        )


def test_hypernet_errors() -> None:
    """Test hypernetwork input validation."""
    layout = HeadLayout((4, 2, 1), channels=2, grid=2)
    params = init_hypernet(np.random.default_rng(0), 8, layout)
    with pytest.raises(ArgumentError):
        hypernet_forward(np.zeros((1, 6)), params, layout)
    with pytest.raises(FeatureDataError):
        hypernet_forward(np.full((1, 8), np.nan), params, layout)


def test_mapping_forward() -> None:
    """Test the generated head on hand-set parameters."""
    constant = MappingHeadParams(
        [np.zeros((4, 3)), np.zeros((3, 2)), np.zeros((2, 2)), np.zeros((2, 1))],
        [np.zeros(3), np.zeros(2), np.zeros(2), np.array([1.5])],
    )
    assert mapping_forward(np.array([1.0, -2.0, 3.0, 4.0]), constant) == 1.5

    head = MappingHeadParams(
        [np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([[1.0], [-1.0]])],
        [np.array([0.5, 0.0]), np.array([0.25])],
    )
    feature = np.array([1.0, 1.0])
    hidden = gelu(np.array([1.5, 2.0]))
    assert mapping_forward(feature, head) == pytest.approx(hidden[0] - hidden[1] + 0.25)

    with pytest.raises(ArgumentError):
        mapping_forward(np.ones(3), head)
