"""Precomputed multi-view and text features.

Containers use the HSF1 layout: the 4-byte magic, five little-endian u32
header fields (M, N_v, N_t, D, eot_index), M (elevation, azimuth) pairs as
little-endian f32 degrees, then the M view blocks (N_v x D) and the text
block (N_t x D) as contiguous little-endian f32, row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from struct import calcsize, pack, unpack_from

import numpy as np

from .const import (
    CAMERA_GRIDS,
    CAMERA_SIX_VIEWS,
    DEFAULT_DIMENSIONS,
    FEATURE_MAGIC,
)
from .exceptions import (
    ConfigurationError,
    DimensionError,
    FeatureDataError,
    FeatureFormatError,
)
from .helpers import philox, require_positive

_LOGGER = logging.getLogger(__name__)

HEADER_FORMAT = "<5I"
HEADER_LENGTH = len(FEATURE_MAGIC) + calcsize(HEADER_FORMAT)
F32 = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class FeatureBundle:
    """Frozen features of one generated sample."""

    sample_id: str
    prompt_id: str
    method_id: str
    views: np.ndarray  # M x N_v x D
    text_tokens: np.ndarray  # N_t x D
    eot_index: int
    viewpoints: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        """Validate shapes and values."""
        if self.views.ndim != 3:
            raise DimensionError(f"views must be M x N_v x D, got {self.views.shape}")
        if self.text_tokens.ndim != 2:
            raise DimensionError(
                f"text tokens must be N_t x D, got {self.text_tokens.shape}"
            )
        num_views, num_patches, dim = self.views.shape
        num_tokens, text_dim = self.text_tokens.shape
        if min(num_views, num_patches, dim, num_tokens) < 1:
            raise DimensionError(f"{self.sample_id}: empty feature dimension")
        if text_dim != dim:
            raise DimensionError(
                f"{self.sample_id}: text dim {text_dim} != visual dim {dim}"
            )
        if not 0 <= self.eot_index < num_tokens:
            raise FeatureDataError(
                f"{self.sample_id}: eot index {self.eot_index} outside [0, {num_tokens})"
            )
        if len(self.viewpoints) != num_views:
            raise DimensionError(
                f"{self.sample_id}: {len(self.viewpoints)} viewpoints for {num_views} views"
            )
        if not (np.isfinite(self.views).all() and np.isfinite(self.text_tokens).all()):
            raise FeatureDataError(f"{self.sample_id}: non-finite feature values")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(M, N_v, N_t, D)."""
        num_views, num_patches, dim = self.views.shape
        return num_views, num_patches, self.text_tokens.shape[0], dim

    @property
    def eot_feature(self) -> np.ndarray:
        """The raw end-of-text token feature."""
        return self.text_tokens[self.eot_index]

    def astype(self, dtype: np.dtype | type) -> FeatureBundle:
        """Return a copy with features cast to dtype."""
        return FeatureBundle(
            self.sample_id,
            self.prompt_id,
            self.method_id,
            self.views.astype(dtype),
            self.text_tokens.astype(dtype),
            self.eot_index,
            self.viewpoints,
        )


@dataclass
class ManifestSample:
    """One manifest row."""

    sample_id: str
    prompt_id: str
    method_id: str
    feature_path: str


@dataclass
class DatasetManifest:
    """Samples, prompt categories and evaluation dimensions of a dataset."""

    samples: list[ManifestSample]
    prompt_categories: dict[str, str]
    dimension_names: list[str] = field(default_factory=lambda: list(DEFAULT_DIMENSIONS))

    def __post_init__(self) -> None:
        """Validate ids and categories."""
        if not self.dimension_names:
            raise ConfigurationError("manifest needs at least one dimension")
        seen: set[str] = set()
        for sample in self.samples:
            if sample.sample_id in seen:
                raise ConfigurationError(f"duplicate sample id {sample.sample_id}")
            seen.add(sample.sample_id)
            if sample.prompt_id not in self.prompt_categories:
                raise ConfigurationError(
                    f"prompt {sample.prompt_id} of {sample.sample_id} has no category"
                )

    @property
    def sample_ids(self) -> list[str]:
        """Sample ids in manifest order."""
        return [sample.sample_id for sample in self.samples]

    @property
    def prompt_ids(self) -> list[str]:
        """Distinct prompt ids in first-seen order."""
        return list(dict.fromkeys(sample.prompt_id for sample in self.samples))

    def sample(self, sample_id: str) -> ManifestSample:
        """Look up a sample by id."""
        for sample in self.samples:
            if sample.sample_id == sample_id:
                return sample
        raise FeatureDataError(f"unknown sample {sample_id}")

    def category_of(self, sample_id: str) -> str:
        """Prompt category of a sample."""
        return self.prompt_categories[self.sample(sample_id).prompt_id]

    def to_dict(self) -> dict:
        """JSON-ready representation."""
        return {
            "dimension_names": list(self.dimension_names),
            "prompt_categories": dict(self.prompt_categories),
            "samples": [vars(sample).copy() for sample in self.samples],
        }


def camera_viewpoints(num_views: int) -> list[tuple[float, float]]:
    """Camera (elevation, azimuth) pairs for a view count."""
    require_positive(num_views=num_views)
    if num_views == len(CAMERA_SIX_VIEWS):
        return list(CAMERA_SIX_VIEWS)
    if num_views in CAMERA_GRIDS:
        elevations, azimuths = CAMERA_GRIDS[num_views]
        return [(elev, azim) for elev in elevations for azim in azimuths]
    return [(0.0, 360.0 * i / num_views) for i in range(num_views)]


def decode_feature_bundle(
    data: bytes, sample_id: str = "", prompt_id: str = "", method_id: str = ""
) -> FeatureBundle:
    """Decode an HSF1 container."""
    if len(data) < HEADER_LENGTH or data[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise FeatureFormatError(f"{sample_id or 'container'}: bad magic or header")
    num_views, num_patches, num_tokens, dim, eot_index = unpack_from(
        HEADER_FORMAT, data, len(FEATURE_MAGIC)
    )
    if min(num_views, num_patches, num_tokens, dim) < 1:
        raise FeatureFormatError(f"{sample_id}: zero dimension in header")
    view_count = num_views * num_patches * dim
    text_count = num_tokens * dim
    expected = HEADER_LENGTH + F32.itemsize * (2 * num_views + view_count + text_count)
    if len(data) != expected:
        raise DimensionError(
            f"{sample_id}: payload is {len(data)} bytes, header declares {expected}"
        )
    _LOGGER.debug(
        "%s: M=%s, N_v=%s, N_t=%s, D=%s, eot=%s",
        sample_id,
        num_views,
        num_patches,
        num_tokens,
        dim,
        eot_index,
    )
    offset = HEADER_LENGTH
    cameras = np.frombuffer(data, F32, 2 * num_views, offset).reshape(num_views, 2)
    offset += cameras.nbytes
    views = np.frombuffer(data, F32, view_count, offset)
    offset += views.nbytes
    text = np.frombuffer(data, F32, text_count, offset)
    return FeatureBundle(
        sample_id,
        prompt_id,
        method_id,
        views.reshape(num_views, num_patches, dim).astype(np.float32),
        text.reshape(num_tokens, dim).astype(np.float32),
        int(eot_index),
        tuple((float(elev), float(azim)) for elev, azim in cameras),
    )


def encode_feature_bundle(bundle: FeatureBundle) -> bytes:
    """Encode a bundle as an HSF1 container."""
    num_views, num_patches, num_tokens, dim = bundle.dims
    header = FEATURE_MAGIC + pack(
        HEADER_FORMAT, num_views, num_patches, num_tokens, dim, bundle.eot_index
    )
    cameras = np.asarray(bundle.viewpoints, dtype=F32).reshape(num_views, 2)
    return b"".join(
        (
            header,
            cameras.tobytes(),
            np.ascontiguousarray(bundle.views, dtype=F32).tobytes(),
            np.ascontiguousarray(bundle.text_tokens, dtype=F32).tobytes(),
        )
    )


def load_feature_bundle(
    path: str | Path, sample_id: str | None = None, prompt_id: str = "", method_id: str = ""
) -> FeatureBundle:
    """Load a feature container from disk."""
    path = Path(path)
    return decode_feature_bundle(
        path.read_bytes(), sample_id or path.stem, prompt_id, method_id
    )


def write_feature_bundle(bundle: FeatureBundle, path: str | Path) -> None:
    """Write a feature container to disk."""
    Path(path).write_bytes(encode_feature_bundle(bundle))


def synth_toy_bundle(
    seed: int,
    dims: tuple[int, int, int, int],
    sample_id: str | None = None,
    prompt_id: str = "",
    method_id: str = "",
) -> FeatureBundle:
    """Deterministic stand-in for frozen encoder outputs, values in [-1, 1]."""
    num_views, num_patches, num_tokens, dim = dims
    require_positive(
        num_views=num_views, num_patches=num_patches, num_tokens=num_tokens, dim=dim
    )
    rng = philox(seed)
    views = rng.uniform(-1.0, 1.0, (num_views, num_patches, dim)).astype(np.float32)
    text = rng.uniform(-1.0, 1.0, (num_tokens, dim)).astype(np.float32)
    eot_index = int(rng.integers(num_tokens))
    return FeatureBundle(
        sample_id if sample_id is not None else f"toy-{seed}",
        prompt_id,
        method_id,
        views,
        text,
        eot_index,
        tuple(
            (float(np.float32(elev)), float(np.float32(azim)))
            for elev, azim in camera_viewpoints(num_views)
        ),
    )


def concat_views(bundle: FeatureBundle) -> np.ndarray:
    """Stack the view features into an (M * N_v) x D matrix in view order."""
    num_views, num_patches, _, dim = bundle.dims
    return bundle.views.reshape(num_views * num_patches, dim)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a JSON dataset manifest."""
    try:
        data = json.loads(Path(path).read_text())
        return DatasetManifest(
            samples=[ManifestSample(**row) for row in data["samples"]],
            prompt_categories=dict(data["prompt_categories"]),
            dimension_names=list(data.get("dimension_names", DEFAULT_DIMENSIONS)),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as ex:
        raise ConfigurationError(f"{path}: malformed manifest ({ex})") from ex


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a JSON dataset manifest."""
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")


def load_dataset(
    manifest: DatasetManifest, feature_dir: str | Path
) -> list[FeatureBundle]:
    """Load every bundle of a manifest, in manifest order."""
    feature_dir = Path(feature_dir)
    bundles = []
    for sample in manifest.samples:
        path = feature_dir / sample.feature_path
        if not path.exists():
            raise FeatureDataError(f"{sample.sample_id}: missing container {path}")
        bundles.append(
            load_feature_bundle(
                path, sample.sample_id, sample.prompt_id, sample.method_id
            )
        )
    _LOGGER.info("Loaded %s feature bundles from %s", len(bundles), feature_dir)
    return bundles
