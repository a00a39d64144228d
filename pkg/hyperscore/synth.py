"""Synthetic datasets labelled by a frozen random model of the same family."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Any

import numpy as np

from .const import GENERATIVE_METHODS, PROMPT_CATEGORIES, SCORE_MAX, SCORE_MIN
from .features import DatasetManifest, FeatureBundle, ManifestSample, synth_toy_bundle
from .helpers import name_key, require_positive
from .model import HyperScoreModel, ModelLayout, build_model
from .training import LabeledSample, predict_samples

_LOGGER = logging.getLogger(__name__)

FEATURE_SUFFIX = ".hsf"


@dataclass
class LabelTransform:
    """Per-dimension standardization of raw teacher scores onto the MOS scale."""

    raw_mean: np.ndarray
    raw_std: np.ndarray
    label_mean: float
    label_std: float

    def apply(self, raw: np.ndarray) -> np.ndarray:
        """Standardize, rescale and clip to the score range."""
        scale = np.where(self.raw_std > 0, self.raw_std, 1.0)
        labels = self.label_mean + self.label_std * (raw - self.raw_mean) / scale
        return np.clip(labels, SCORE_MIN, SCORE_MAX)

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready representation."""
        return {
            "raw_mean": self.raw_mean.tolist(),
            "raw_std": self.raw_std.tolist(),
            "label_mean": self.label_mean,
            "label_std": self.label_std,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> LabelTransform:
        """Inverse of to_dict."""
        return cls(
            np.asarray(data["raw_mean"]),
            np.asarray(data["raw_std"]),
            float(data["label_mean"]),
            float(data["label_std"]),
        )


@dataclass
class SynthDataset:
    """Manifest, bundles, teacher labels and the teacher itself."""

    manifest: DatasetManifest
    bundles: list[FeatureBundle]
    targets: np.ndarray  # N x K
    teacher: HyperScoreModel
    transform: LabelTransform

    def samples(self) -> list[LabeledSample]:
        """Bundles paired with their labels."""
        return [
            LabeledSample(bundle, target.astype(np.float32))
            for bundle, target in zip(self.bundles, self.targets)
        ]


def method_name(index: int) -> str:
    """Generative method label of a method index."""
    return GENERATIVE_METHODS[index] if index < len(GENERATIVE_METHODS) else f"method-{index}"


def teacher_seed(seed: int) -> int:
    """Initialization seed of the labelling model."""
    return name_key(f"teacher-{seed}")


def teacher_labels(
    teacher: HyperScoreModel, bundles: list[FeatureBundle], transform: LabelTransform
) -> np.ndarray:
    """Labels a teacher assigns to bundles."""
    return transform.apply(predict_samples(teacher, bundles).astype(np.float64))


def synth_dataset(
    layout: ModelLayout,
    dims: tuple[int, int, int],
    num_prompts: int,
    num_methods: int,
    seed: int,
    label_mean: float = 5.0,
    label_std: float = 1.0,
) -> SynthDataset:
    """num_prompts x num_methods toy samples scored by a frozen random teacher."""
    require_positive(num_prompts=num_prompts, num_methods=num_methods)
    num_views, num_patches, num_tokens = dims
    rows = []
    bundles = []
    categories = {}
    for prompt in range(num_prompts):
        prompt_id = f"prompt-{prompt:03d}"
        categories[prompt_id] = PROMPT_CATEGORIES[prompt % len(PROMPT_CATEGORIES)]
        for method in range(num_methods):
            sample_id = f"{prompt_id}-m{method}"
            rows.append(
                ManifestSample(sample_id, prompt_id, method_name(method), sample_id + FEATURE_SUFFIX)
            )
            bundles.append(
                synth_toy_bundle(
                    name_key(f"{seed}/{sample_id}"),
                    (num_views, num_patches, num_tokens, layout.dim),
                    sample_id,
                    prompt_id,
                    method_name(method),
                )
            )
    manifest = DatasetManifest(rows, categories, list(layout.dimension_names))
    teacher = build_model(layout, teacher_seed(seed))
    raw = predict_samples(teacher, bundles).astype(np.float64)
    transform = LabelTransform(raw.mean(axis=0), raw.std(axis=0), label_mean, label_std)
    _LOGGER.info("Synthesized %s samples over %s prompts", len(bundles), num_prompts)
    return SynthDataset(manifest, bundles, transform.apply(raw), teacher, transform)
