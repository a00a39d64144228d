"""Condition prompt tests."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import kurtosis

from hyperscore.conditions import (
    ConditionPromptSet,
    MeanTextEncoder,
    ToyTextEncoder,
    condition_backward,
    condition_forward,
    default_dimension_names,
    encode_conditions,
    init_learnable_tokens,
)
from hyperscore.exceptions import ArgumentError


def test_mean_encoder() -> None:
    """Test a mean-of-tokens encoder averages meta and learnable tokens."""
    prompts = ConditionPromptSet(
        np.array([[1.0, 0.0]]), np.array([[[0.0, 1.0]]]), ["alignment"]
    )
    np.testing.assert_allclose(
        encode_conditions(prompts, MeanTextEncoder(2)), [[0.5, 0.5]]
    )


def test_toy_encoder_oracle() -> None:
    """Test the toy encoder against a loop evaluation of its formula."""
    prompts = init_learnable_tokens(5, 2, 3, 6)
    encoder = ToyTextEncoder(9, 6, prompts.sequence_length, rank=4)
    out = encode_conditions(prompts, encoder)

    sequences = prompts.sequences()
    expected = np.zeros((2, 6))
    for k in range(2):
        flat = []
        for s in range(sequences.shape[1]):
            flat.extend(sequences[k, s] / (1.0 + s))
        hidden = [
            sum(encoder.mix_in[r, j] * flat[j] for j in range(len(flat)))
            for r in range(encoder.rank)
        ]
        for d in range(6):
            expected[k, d] = np.tanh(
                sum(encoder.mix_out[d, r] * hidden[r] for r in range(encoder.rank))
            )
    np.testing.assert_allclose(out, expected, rtol=1e-10, atol=1e-12)


def test_token_init_distribution() -> None:
    """Test learnable tokens are drawn from N(0, 0.02^2)."""
    draws = init_learnable_tokens(0, 4, 12, 512).learnable_tokens.ravel()
    count = draws.size
    assert count >= 10_000
    assert abs(draws.mean()) < 3 * 0.02 / np.sqrt(count)
    assert draws.std() == pytest.approx(0.02, rel=0.02)
    assert kurtosis(draws, fisher=False) == pytest.approx(3.0, abs=0.2)
    assert np.mean(np.abs(draws) < 0.02) == pytest.approx(0.6827, abs=0.015)


def test_deterministic() -> None:
    """Test seeded construction and repeated encoding are stable."""
    first = init_learnable_tokens(1, 4, 12, 512)
    again = init_learnable_tokens(1, 4, 12, 512)
    assert first.learnable_tokens.shape == (4, 12, 512)
    np.testing.assert_array_equal(first.learnable_tokens, again.learnable_tokens)
    np.testing.assert_array_equal(first.meta_tokens, again.meta_tokens)
    assert first.dimension_names == ["alignment", "geometry", "texture", "overall"]
    assert abs(first.learnable_tokens.std() - 0.02) < 0.002

    encoder = ToyTextEncoder(3, 512, 13)
    np.testing.assert_array_equal(
        encode_conditions(first, encoder), encode_conditions(again, encoder)
    )
    np.testing.assert_array_equal(
        ToyTextEncoder(3, 512, 13).mix_in, encoder.mix_in
    )


def test_without_meta_tokens() -> None:
    """Test the learnable-only prompt variant."""
    prompts = init_learnable_tokens(2, 3, 4, 8, use_meta_tokens=False)
    assert prompts.sequence_length == 4
    np.testing.assert_array_equal(prompts.sequences(), prompts.learnable_tokens)
    assert encode_conditions(prompts, ToyTextEncoder(0, 8, 4)).shape == (3, 8)


def test_errors() -> None:
    """Test argument validation."""
    with pytest.raises(ArgumentError):
        init_learnable_tokens(0, 0, 12, 8)
    with pytest.raises(ArgumentError):
        init_learnable_tokens(0, 2, 12, 8, dimension_names=["alignment"])
    prompts = init_learnable_tokens(0, 2, 3, 8)
    with pytest.raises(ArgumentError):
        condition_forward(prompts, MeanTextEncoder(4))
    with pytest.raises(ArgumentError):
        condition_forward(prompts, ToyTextEncoder(0, 8, 3))
    assert default_dimension_names(5)[4] == "dimension_4"


def test_condition_backward() -> None:
    """Test token gradients against central differences."""
    prompts = init_learnable_tokens(4, 2, 3, 5)
    encoder = ToyTextEncoder(6, 5, prompts.sequence_length, rank=3)
    weights = np.random.default_rng(0).standard_normal((2, 5))

    def objective() -> float:
        return float(np.sum(weights * encode_conditions(prompts, encoder)))

    _, cache = condition_forward(prompts, encoder)
    grad = condition_backward(cache, weights, prompts, encoder)
    assert grad.shape == prompts.learnable_tokens.shape

    step = 1e-6
    numeric = np.zeros_like(grad)
    for index in np.ndindex(grad.shape):
        saved = prompts.learnable_tokens[index]
        prompts.learnable_tokens[index] = saved + step
        plus = objective()
        prompts.learnable_tokens[index] = saved - step
        minus = objective()
        prompts.learnable_tokens[index] = saved
        numeric[index] = (plus - minus) / (2 * step)
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)
