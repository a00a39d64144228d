"""HyperScore model: parameter groups and end-to-end prediction."""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import asdict, dataclass, field, replace
import logging
from typing import Any

import numpy as np

from .conditions import (
    ConditionPromptSet,
    FrozenTextEncoder,
    ToyTextEncoder,
    default_dimension_names,
    embed_meta_text,
    encode_conditions,
    init_learnable_tokens,
)
from .const import (
    AGGREGATION_CONCAT,
    AGGREGATION_MULTIPLY,
    AGGREGATIONS,
    CONF_AGGREGATION,
    CONF_CONDITIONAL_FUSION,
    CONF_DIMENSIONS,
    CONF_DIMS,
    CONF_ENCODER_RANK,
    CONF_FEATURE_DIM,
    CONF_FUSION_HIDDEN,
    CONF_HEAD_DIMS,
    CONF_HYPER_CHANNELS,
    CONF_HYPER_GRID,
    CONF_HYPER_HEADS,
    CONF_MODEL,
    CONF_PROMPT_TOKENS,
    CONF_QUALITY_DIM,
    CONF_USE_META,
    DEFAULT_ENCODER_RANK,
    DEFAULT_FEATURE_DIM,
    DEFAULT_HYPER_CHANNELS,
    DEFAULT_HYPER_GRID,
    DEFAULT_PROMPT_TOKENS,
    DEFAULT_QUALITY_DIM,
    GROUP_ENCODER,
    GROUP_FUSION,
    GROUP_HYPERNET,
    GROUP_PROMPTS,
    PARAM_GROUPS,
)
from .exceptions import ArgumentError, DimensionError
from .features import FeatureBundle
from .fusion import MLPParams, fusion_forward, init_fusion_mlp, sample_context
from .helpers import philox, require_positive
from .hypernet import (
    HeadLayout,
    MappingHeadParams,
    fixed_heads,
    fixed_heads_backward,
    head_forward,
    hypernet_backward,
    hypernet_forward,
    init_fixed_heads,
    init_hypernet,
)

_LOGGER = logging.getLogger(__name__)


def default_head_dims(quality_dim: int) -> tuple[int, ...]:
    """D_q -> D_q/2 -> D_q/4 -> D_q/8 -> 1, never narrower than one unit."""
    return (
        quality_dim,
        max(quality_dim // 2, 1),
        max(quality_dim // 4, 1),
        max(quality_dim // 8, 1),
        1,
    )


@dataclass(frozen=True)
class ModelLayout:
    """Every size and switch that shapes the parameters."""

    dim: int = DEFAULT_FEATURE_DIM
    quality_dim: int = DEFAULT_QUALITY_DIM
    dimension_names: tuple[str, ...] = tuple(default_dimension_names(4))
    prompt_tokens: int = DEFAULT_PROMPT_TOKENS
    fusion_hidden: int | None = None
    head_dims: tuple[int, ...] | None = None
    hyper_channels: int = DEFAULT_HYPER_CHANNELS
    hyper_grid: int = DEFAULT_HYPER_GRID
    encoder_rank: int = DEFAULT_ENCODER_RANK
    encoder_seed: int = 0
    aggregation: str = AGGREGATION_MULTIPLY
    use_meta_tokens: bool = True
    conditional_fusion: bool = True
    hyper_heads: bool = True

    def __post_init__(self) -> None:
        """Validate sizes and fill derived defaults."""
        require_positive(
            D=self.dim,
            D_q=self.quality_dim,
            K=len(self.dimension_names),
            L=self.prompt_tokens,
        )
        if self.aggregation not in AGGREGATIONS:
            raise ArgumentError(f"unknown aggregation {self.aggregation}")
        if self.fusion_hidden is None:
            object.__setattr__(self, "fusion_hidden", self.fusion_in_dim)
        if self.head_dims is None:
            object.__setattr__(self, "head_dims", default_head_dims(self.quality_dim))
        object.__setattr__(self, "head_dims", tuple(self.head_dims))
        object.__setattr__(self, "dimension_names", tuple(self.dimension_names))
        if self.head_dims[0] != self.quality_dim:
            raise ArgumentError(
                f"head input {self.head_dims[0]} != quality dim {self.quality_dim}"
            )

    @property
    def num_conditions(self) -> int:
        """K."""
        return len(self.dimension_names)

    @property
    def fusion_in_dim(self) -> int:
        """MLP input size; doubled for concatenation."""
        return 2 * self.dim if self.aggregation == AGGREGATION_CONCAT else self.dim

    @property
    def head(self) -> HeadLayout:
        """Mapping-head layout."""
        return HeadLayout(self.head_dims, self.hyper_channels, self.hyper_grid)

    @property
    def sequence_length(self) -> int:
        """Encoder input length per condition."""
        return self.prompt_tokens + int(self.use_meta_tokens)

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready representation."""
        data = asdict(self)
        data["dimension_names"] = list(self.dimension_names)
        data["head_dims"] = list(self.head_dims)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelLayout:
        """Inverse of to_dict."""
        data = dict(data)
        data["dimension_names"] = tuple(data["dimension_names"])
        data["head_dims"] = tuple(data["head_dims"]) if data.get("head_dims") else None
        return cls(**data)

    @classmethod
    def from_config(cls, config: dict[str, Any]) -> ModelLayout:
        """Layout from a validated run configuration."""
        dims = config[CONF_DIMS]
        model = config[CONF_MODEL]
        return cls(
            dim=dims[CONF_FEATURE_DIM],
            quality_dim=dims[CONF_QUALITY_DIM],
            dimension_names=tuple(dims[CONF_DIMENSIONS]),
            prompt_tokens=dims[CONF_PROMPT_TOKENS],
            fusion_hidden=model[CONF_FUSION_HIDDEN],
            head_dims=tuple(model[CONF_HEAD_DIMS]) if model[CONF_HEAD_DIMS] else None,
            hyper_channels=model[CONF_HYPER_CHANNELS],
            hyper_grid=model[CONF_HYPER_GRID],
            encoder_rank=model[CONF_ENCODER_RANK],
            aggregation=model[CONF_AGGREGATION],
            use_meta_tokens=model[CONF_USE_META],
            conditional_fusion=model[CONF_CONDITIONAL_FUSION],
            hyper_heads=model[CONF_HYPER_HEADS],
        )


@dataclass
class ModelParams:
    """Trainable tensors, grouped by learning-rate group."""

    groups: dict[str, dict[str, np.ndarray]] = field(
        default_factory=lambda: {group: {} for group in PARAM_GROUPS}
    )

    def named(self) -> Iterator[tuple[str, str, np.ndarray]]:
        """(group, name, tensor) in a fixed order."""
        for group in PARAM_GROUPS:
            for name, tensor in self.groups.get(group, {}).items():
                yield group, name, tensor

    def map(self, func) -> ModelParams:
        """Apply func to every tensor."""
        return ModelParams(
            {
                group: {name: func(tensor) for name, tensor in tensors.items()}
                for group, tensors in self.groups.items()
            }
        )

    def copy(self) -> ModelParams:
        """Deep copy."""
        return self.map(np.copy)

    def zeros_like(self) -> ModelParams:
        """Zero tensors shaped like these."""
        return self.map(np.zeros_like)

    def astype(self, dtype: np.dtype | type) -> ModelParams:
        """Copy with every tensor cast to dtype."""
        return self.map(lambda tensor: tensor.astype(dtype))

    @property
    def size(self) -> int:
        """Number of trainable scalars."""
        return sum(tensor.size for _, _, tensor in self.named())


@dataclass
class HyperScoreModel:
    """Layout, trainable parameters, and the frozen pieces."""

    layout: ModelLayout
    params: ModelParams
    meta_tokens: np.ndarray
    encoder: FrozenTextEncoder

    @property
    def prompts(self) -> ConditionPromptSet:
        """Condition prompts backed by the trainable token tensor."""
        return ConditionPromptSet(
            self.meta_tokens,
            self.params.groups[GROUP_PROMPTS]["learnable_tokens"],
            list(self.layout.dimension_names),
            self.layout.use_meta_tokens,
        )

    @property
    def mlp(self) -> MLPParams:
        """Quality-feature MLP."""
        return MLPParams.from_group(self.params.groups[GROUP_FUSION])

    @property
    def hypernet(self) -> dict[str, np.ndarray]:
        """Hypernetwork tensors, or the fixed heads when hyper_heads is off."""
        return self.params.groups[GROUP_HYPERNET]

    @property
    def dtype(self) -> np.dtype:
        """Working precision."""
        return self.params.groups[GROUP_PROMPTS]["learnable_tokens"].dtype

    def with_params(self, params: ModelParams) -> HyperScoreModel:
        """Same frozen parts, other trainables."""
        return replace(self, params=params)

    def astype(self, dtype: np.dtype | type) -> HyperScoreModel:
        """Copy computing in dtype."""
        return HyperScoreModel(
            self.layout,
            self.params.astype(dtype),
            self.meta_tokens.astype(dtype),
            self.encoder.astype(dtype),
        )

    def predict(self, bundle: FeatureBundle) -> np.ndarray:
        """K raw scores for one bundle."""
        return predict_all(bundle, self.prompts, self.encoder, self)


def build_model(
    layout: ModelLayout, seed: int, dtype: np.dtype | type = np.float32
) -> HyperScoreModel:
    """Freshly initialized model; the frozen encoder depends on layout only."""
    prompts = init_learnable_tokens(
        seed,
        layout.num_conditions,
        layout.prompt_tokens,
        layout.dim,
        list(layout.dimension_names),
        layout.use_meta_tokens,
    )
    params = ModelParams(
        {
            GROUP_PROMPTS: {"learnable_tokens": prompts.learnable_tokens},
            GROUP_FUSION: init_fusion_mlp(
                philox(seed, 0xF0), layout.fusion_in_dim, layout.fusion_hidden, layout.quality_dim
            ),
            GROUP_HYPERNET: (
                init_hypernet(philox(seed, 0x4E), layout.dim, layout.head)
                if layout.hyper_heads
                else init_fixed_heads(philox(seed, 0x4E), layout.num_conditions, layout.head)
            ),
            GROUP_ENCODER: {},
        }
    )
    encoder = ToyTextEncoder(
        layout.encoder_seed, layout.dim, layout.sequence_length, layout.encoder_rank
    )
    _LOGGER.debug("Built model with %s trainable values", params.size)
    return HyperScoreModel(layout, params, prompts.meta_tokens, encoder).astype(dtype)


def meta_tokens_for(layout: ModelLayout) -> np.ndarray:
    """Frozen meta-token embeddings of a layout's dimension names."""
    return np.stack([embed_meta_text(name, layout.dim) for name in layout.dimension_names])


def check_bundle(bundle: FeatureBundle, layout: ModelLayout) -> None:
    """Reject bundles whose feature size does not match the model."""
    if bundle.dims[3] != layout.dim:
        raise DimensionError(
            f"{bundle.sample_id}: feature dim {bundle.dims[3]} != model dim {layout.dim}"
        )


def mapping_heads(
    conditions: np.ndarray, model: HyperScoreModel
) -> tuple[MappingHeadParams, Any]:
    """Per-condition head parameters: generated, or fixed when hyper_heads is off."""
    if model.layout.hyper_heads:
        return hypernet_forward(conditions, model.hypernet, model.layout.head)
    return fixed_heads(conditions, model.hypernet, model.layout.head)


def mapping_heads_backward(
    cache: Any, grad_head: MappingHeadParams, model: HyperScoreModel
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Condition and parameter gradients of mapping_heads."""
    if model.layout.hyper_heads:
        return hypernet_backward(cache, grad_head, model.hypernet, model.layout.head)
    return fixed_heads_backward(cache, grad_head)


def predict_all(
    bundle: FeatureBundle,
    prompts: ConditionPromptSet,
    encoder: FrozenTextEncoder,
    model: HyperScoreModel,
) -> np.ndarray:
    """K scores: conditions -> fusion -> generated head -> score."""
    check_bundle(bundle, model.layout)
    conditions = encode_conditions(prompts, encoder)
    head, _ = mapping_heads(conditions, model)
    context = sample_context(bundle, model.dtype)
    features, _ = fusion_forward(
        context,
        conditions,
        model.mlp,
        model.layout.aggregation,
        model.layout.conditional_fusion,
    )
    scores, _ = head_forward(features, head)
    return scores


def fusion_weight_map(bundle: FeatureBundle, model: HyperScoreModel) -> np.ndarray:
    """Patch weights per condition, reshaped to K x M x N_v."""
    check_bundle(bundle, model.layout)
    conditions = encode_conditions(model.prompts, model.encoder)
    context = sample_context(bundle, model.dtype)
    _, cache = fusion_forward(
        context,
        conditions,
        model.mlp,
        model.layout.aggregation,
        model.layout.conditional_fusion,
    )
    weights = cache[2]
    num_views, num_patches, _, _ = bundle.dims
    return weights.T.reshape(-1, num_views, num_patches)
