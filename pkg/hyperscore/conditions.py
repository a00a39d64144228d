"""Condition prompts and the frozen textual encoder.

Each evaluation dimension owns a tokenized prompt: its meta token first,
followed by L learnable tokens. A frozen encoder maps the sequence to one
D-vector, the condition feature. Only the learnable tokens receive gradient.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
import logging
from typing import Any

import numpy as np

from .const import DEFAULT_DIMENSIONS, DEFAULT_ENCODER_RANK, TOKEN_INIT_STD
from .exceptions import ArgumentError
from .helpers import name_key, philox, require_positive

_LOGGER = logging.getLogger(__name__)


@dataclass
class ConditionPromptSet:
    """K meta tokens plus K x L learnable tokens."""

    meta_tokens: np.ndarray  # K x D, frozen
    learnable_tokens: np.ndarray  # K x L x D, trainable
    dimension_names: list[str]
    use_meta_tokens: bool = True

    def __post_init__(self) -> None:
        """Validate shapes."""
        if self.learnable_tokens.ndim != 3 or self.meta_tokens.ndim != 2:
            raise ArgumentError("expected K x D meta and K x L x D learnable tokens")
        num_dims, num_tokens, dim = self.learnable_tokens.shape
        require_positive(K=num_dims, L=num_tokens, D=dim)
        if self.meta_tokens.shape != (num_dims, dim):
            raise ArgumentError(
                f"meta tokens {self.meta_tokens.shape} do not match {(num_dims, dim)}"
            )
        if len(self.dimension_names) != num_dims:
            raise ArgumentError(
                f"{len(self.dimension_names)} dimension names for K={num_dims}"
            )

    @property
    def num_conditions(self) -> int:
        """K."""
        return self.learnable_tokens.shape[0]

    @property
    def dim(self) -> int:
        """D."""
        return self.learnable_tokens.shape[2]

    @property
    def sequence_length(self) -> int:
        """Tokens fed to the encoder per condition."""
        return self.learnable_tokens.shape[1] + int(self.use_meta_tokens)

    def sequences(self) -> np.ndarray:
        """K x S x D token sequences, meta token first."""
        if not self.use_meta_tokens:
            return self.learnable_tokens
        return np.concatenate(
            (self.meta_tokens[:, None, :].astype(self.learnable_tokens.dtype),
             self.learnable_tokens),
            axis=1,
        )


class FrozenTextEncoder(ABC):
    """Frozen map from a token sequence (S x D) to an EOT-style D-vector."""

    dim: int

    @abstractmethod
    def encode(self, sequences: np.ndarray) -> tuple[np.ndarray, Any]:
        """Encode K x S x D sequences into K x D outputs and a backward cache."""

    @abstractmethod
    def backward(self, cache: Any, grad: np.ndarray) -> np.ndarray:
        """Gradient of the input sequences given the output gradient."""

    def astype(self, dtype: np.dtype | type) -> FrozenTextEncoder:
        """Encoder computing in dtype; parameter-free encoders return self."""
        return self


class MeanTextEncoder(FrozenTextEncoder):
    """Averages the token sequence."""

    def __init__(self, dim: int) -> None:
        """Initialize the encoder."""
        require_positive(D=dim)
        self.dim = dim

    def encode(self, sequences: np.ndarray) -> tuple[np.ndarray, Any]:
        """Mean over the token axis."""
        _check_sequences(sequences, self.dim)
        return sequences.mean(axis=1), sequences.shape

    def backward(self, cache: Any, grad: np.ndarray) -> np.ndarray:
        """Spread the gradient evenly over the tokens."""
        num, length, dim = cache
        return np.broadcast_to(grad[:, None, :] / length, (num, length, dim)).copy()


class ToyTextEncoder(FrozenTextEncoder):
    """Position-weighted low-rank linear mixing followed by tanh.

    out = tanh(U @ (V @ flatten(p_s * token_s))) with p_s = 1 / (1 + s),
    U (D x r) and V (r x S*D) drawn once from the seed and never updated.
    """

    def __init__(
        self, seed: int, dim: int, length: int, rank: int = DEFAULT_ENCODER_RANK
    ) -> None:
        """Initialize the frozen mixing parameters."""
        require_positive(D=dim, S=length, rank=rank)
        self.seed = seed
        self.dim = dim
        self.length = length
        self.rank = min(rank, dim)
        rng = philox(seed, 0x7E47)
        self.position_scale = 1.0 / (1.0 + np.arange(length, dtype=np.float64))
        self.mix_in = rng.standard_normal((self.rank, length * dim)) / np.sqrt(
            length * dim
        )
        self.mix_out = rng.standard_normal((dim, self.rank)) / np.sqrt(self.rank)
        self.mix_in.setflags(write=False)
        self.mix_out.setflags(write=False)

    def astype(self, dtype: np.dtype | type) -> ToyTextEncoder:
        """Copy with the frozen parameters cast to dtype."""
        other = ToyTextEncoder.__new__(ToyTextEncoder)
        other.seed, other.dim, other.length, other.rank = (
            self.seed,
            self.dim,
            self.length,
            self.rank,
        )
        other.position_scale = self.position_scale.astype(dtype)
        other.mix_in = self.mix_in.astype(dtype)
        other.mix_out = self.mix_out.astype(dtype)
        return other

    def encode(self, sequences: np.ndarray) -> tuple[np.ndarray, Any]:
        """Mix each sequence into one D-vector."""
        _check_sequences(sequences, self.dim)
        if sequences.shape[1] != self.length:
            raise ArgumentError(
                f"encoder expects {self.length} tokens, got {sequences.shape[1]}"
            )
        scaled = sequences * self.position_scale[None, :, None].astype(sequences.dtype)
        flat = scaled.reshape(sequences.shape[0], -1)
        hidden = flat @ self.mix_in.T.astype(flat.dtype)
        out = np.tanh(hidden @ self.mix_out.T.astype(flat.dtype))
        return out, (out, sequences.shape)

    def backward(self, cache: Any, grad: np.ndarray) -> np.ndarray:
        """Back-propagate through tanh, the two mixing maps and the scaling."""
        out, shape = cache
        grad_pre = grad * (1.0 - out * out)
        grad_hidden = grad_pre @ self.mix_out.astype(grad.dtype)
        grad_flat = grad_hidden @ self.mix_in.astype(grad.dtype)
        return grad_flat.reshape(shape) * self.position_scale[None, :, None].astype(
            grad.dtype
        )


def _check_sequences(sequences: np.ndarray, dim: int) -> None:
    if sequences.ndim != 3 or sequences.shape[2] != dim:
        raise ArgumentError(
            f"expected K x S x {dim} token sequences, got {sequences.shape}"
        )


def embed_meta_text(name: str, dim: int) -> np.ndarray:
    """Deterministic toy embedding of a meta text such as "geometry"."""
    return philox(name_key(name)).uniform(-1.0, 1.0, dim)


def default_dimension_names(num_dims: int) -> list[str]:
    """Standard dimension names, extended generically past four."""
    return [
        DEFAULT_DIMENSIONS[i] if i < len(DEFAULT_DIMENSIONS) else f"dimension_{i}"
        for i in range(num_dims)
    ]


def init_learnable_tokens(
    seed: int,
    num_dims: int,
    num_tokens: int,
    dim: int,
    dimension_names: list[str] | None = None,
    use_meta_tokens: bool = True,
) -> ConditionPromptSet:
    """Draw learnable tokens from N(0, 0.02^2) and embed the meta texts."""
    require_positive(K=num_dims, L=num_tokens, D=dim)
    names = list(dimension_names or default_dimension_names(num_dims))
    rng = philox(seed, 0xC0DE)
    learnable = rng.normal(0.0, TOKEN_INIT_STD, (num_dims, num_tokens, dim))
    meta = np.stack([embed_meta_text(name, dim) for name in names])
    _LOGGER.debug("Initialized %s x %s prompt tokens of size %s", num_dims, num_tokens, dim)
    return ConditionPromptSet(meta, learnable, names, use_meta_tokens)


def condition_forward(
    prompts: ConditionPromptSet, encoder: FrozenTextEncoder
) -> tuple[np.ndarray, Any]:
    """Condition features K x D and the cache for condition_backward."""
    if encoder.dim != prompts.dim:
        raise ArgumentError(f"encoder dim {encoder.dim} != prompt dim {prompts.dim}")
    return encoder.encode(prompts.sequences())


def condition_backward(
    cache: Any,
    grad: np.ndarray,
    prompts: ConditionPromptSet,
    encoder: FrozenTextEncoder,
) -> np.ndarray:
    """Gradient of the learnable tokens given the condition-feature gradient."""
    grad_sequences = encoder.backward(cache, grad)
    if prompts.use_meta_tokens:
        return grad_sequences[:, 1:, :]
    return grad_sequences


def encode_conditions(
    prompts: ConditionPromptSet, encoder: FrozenTextEncoder
) -> np.ndarray:
    """Condition features f_c (K x D)."""
    conditions, _ = condition_forward(prompts, encoder)
    return conditions
