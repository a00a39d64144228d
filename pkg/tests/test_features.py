"""Feature container tests."""
from __future__ import annotations

from struct import pack

import numpy as np
import pytest

from hyperscore.const import CAMERA_SIX_VIEWS, FEATURE_MAGIC
from hyperscore.exceptions import (
    ArgumentError,
    ConfigurationError,
    DimensionError,
    FeatureDataError,
    FeatureFormatError,
)
from hyperscore.features import (
    DatasetManifest,
    FeatureBundle,
    ManifestSample,
    camera_viewpoints,
    concat_views,
    decode_feature_bundle,
    encode_feature_bundle,
    load_dataset,
    load_feature_bundle,
    load_manifest,
    synth_toy_bundle,
    write_feature_bundle,
    write_manifest,
)


def _identity_container() -> bytes:
    return b"".join(
        (
            FEATURE_MAGIC,
            pack("<5I", 1, 1, 1, 2, 0),
            np.array([0.0, 0.0], dtype="<f4").tobytes(),
            np.array([1.0, 0.0], dtype="<f4").tobytes(),
            np.array([0.0, 1.0], dtype="<f4").tobytes(),
        )
    )


def test_decode_identity_payload() -> None:
    """Test decoding a hand-built container."""
    bundle = decode_feature_bundle(_identity_container(), "s0")
    assert bundle.dims == (1, 1, 1, 2)
    np.testing.assert_array_equal(bundle.views[0, 0], [1.0, 0.0])
    np.testing.assert_array_equal(bundle.text_tokens[0], [0.0, 1.0])
    assert bundle.eot_index == 0
    assert bundle.viewpoints == ((0.0, 0.0),)


def test_decode_errors() -> None:
    """Test container error classes."""
    data = _identity_container()
    with pytest.raises(FeatureFormatError):
        decode_feature_bundle(b"XXXX" + data[4:])
    with pytest.raises(FeatureFormatError):
        decode_feature_bundle(data[:10])
    with pytest.raises(DimensionError):
        decode_feature_bundle(data[:-4])
    with pytest.raises(FeatureFormatError):
        decode_feature_bundle(FEATURE_MAGIC + pack("<5I", 0, 1, 1, 2, 0))

    bad_eot = FEATURE_MAGIC + pack("<5I", 1, 1, 1, 2, 5) + data[24:]
    with pytest.raises(FeatureDataError):
        decode_feature_bundle(bad_eot)

    nan = bytearray(data)
    nan[-4:] = np.array([np.nan], dtype="<f4").tobytes()
    with pytest.raises(FeatureDataError):
        decode_feature_bundle(bytes(nan))


def test_full_scale_container() -> None:
    """Test a full-size container decodes to 6 x 196 x 512 views."""
    bundle = synth_toy_bundle(3, (6, 196, 77, 512))
    decoded = decode_feature_bundle(encode_feature_bundle(bundle))
    assert decoded.views.shape == (6, 196, 512)
    assert decoded.text_tokens.shape == (77, 512)
    assert decoded.viewpoints == tuple(CAMERA_SIX_VIEWS)


def test_round_trip(tmp_path) -> None:
    """Test write then load is bit-exact."""
    bundle = synth_toy_bundle(11, (4, 5, 3, 8), "abc", "p1", "m1")
    path = tmp_path / "abc.hsf"
    write_feature_bundle(bundle, path)
    loaded = load_feature_bundle(path, prompt_id="p1", method_id="m1")
    assert loaded.sample_id == "abc"
    assert loaded.views.tobytes() == bundle.views.tobytes()
    assert loaded.text_tokens.tobytes() == bundle.text_tokens.tobytes()
    assert loaded.eot_index == bundle.eot_index
    assert loaded.viewpoints == bundle.viewpoints
    assert encode_feature_bundle(loaded) == encode_feature_bundle(bundle)


def test_synth_toy_bundle() -> None:
    """Test synthetic bundles are a pure function of seed and dims."""
    first = synth_toy_bundle(7, (2, 3, 4, 5))
    again = synth_toy_bundle(7, (2, 3, 4, 5))
    other = synth_toy_bundle(8, (2, 3, 4, 5))
    np.testing.assert_array_equal(first.views, again.views)
    np.testing.assert_array_equal(first.text_tokens, again.text_tokens)
    assert first.eot_index == again.eot_index
    assert not np.array_equal(first.views, other.views)
    assert np.abs(first.views).max() <= 1.0
    with pytest.raises(ArgumentError):
        synth_toy_bundle(7, (0, 3, 4, 5))


def test_bundle_validation() -> None:
    """Test FeatureBundle invariants."""
    views = np.zeros((1, 2, 3), dtype=np.float32)
    with pytest.raises(DimensionError):
        FeatureBundle("s", "p", "m", views, np.zeros((2, 4)), 0, ((0.0, 0.0),))
    with pytest.raises(FeatureDataError):
        FeatureBundle("s", "p", "m", views, np.zeros((2, 3)), 2, ((0.0, 0.0),))
    with pytest.raises(DimensionError):
        FeatureBundle("s", "p", "m", views, np.zeros((2, 3)), 0, ())


def test_concat_views() -> None:
    """Test view stacking keeps order and every value."""
    bundle = synth_toy_bundle(1, (2, 3, 2, 4))
    stacked = concat_views(bundle)
    assert stacked.shape == (6, 4)
    np.testing.assert_array_equal(stacked[:3], bundle.views[0])
    np.testing.assert_array_equal(stacked[3:], bundle.views[1])

    single = synth_toy_bundle(1, (1, 3, 2, 4))
    np.testing.assert_array_equal(concat_views(single), single.views[0])

    assert concat_views(synth_toy_bundle(1, (6, 196, 2, 8))).shape == (1176, 8)


def test_camera_viewpoints() -> None:
    """Test camera table lookups."""
    assert camera_viewpoints(6) == CAMERA_SIX_VIEWS
    assert len(camera_viewpoints(12)) == 12
    assert camera_viewpoints(4) == [(-60.0, 0.0), (-60.0, 180.0), (60.0, 0.0), (60.0, 180.0)]
    assert [azim for _, azim in camera_viewpoints(5)] == [0.0, 72.0, 144.0, 216.0, 288.0]


def test_manifest(tmp_path) -> None:
    """Test manifest round trip, validation and dataset loading."""
    samples = [
        ManifestSample("a", "p0", "DreamFusion", "a.hsf"),
        ManifestSample("b", "p1", "Magic3D", "b.hsf"),
    ]
    manifest = DatasetManifest(samples, {"p0": "Basic", "p1": "Action"})
    write_manifest(manifest, tmp_path / "manifest.json")
    loaded = load_manifest(tmp_path / "manifest.json")
    assert loaded.sample_ids == ["a", "b"]
    assert loaded.prompt_ids == ["p0", "p1"]
    assert loaded.category_of("b") == "Action"
    assert loaded.dimension_names == ["alignment", "geometry", "texture", "overall"]

    with pytest.raises(FeatureDataError):
        loaded.sample("zzz")
    with pytest.raises(ConfigurationError):
        DatasetManifest(samples + [samples[0]], {"p0": "Basic", "p1": "Action"})
    with pytest.raises(ConfigurationError):
        DatasetManifest(samples, {"p0": "Basic"})

    (tmp_path / "broken.json").write_text("{}")
    with pytest.raises(ConfigurationError):
        load_manifest(tmp_path / "broken.json")

    write_feature_bundle(synth_toy_bundle(1, (1, 2, 2, 4)), tmp_path / "a.hsf")
    with pytest.raises(FeatureDataError):
        load_dataset(loaded, tmp_path)
    write_feature_bundle(synth_toy_bundle(2, (1, 2, 2, 4)), tmp_path / "b.hsf")
    bundles = load_dataset(loaded, tmp_path)
    assert [bundle.sample_id for bundle in bundles] == ["a", "b"]
    assert bundles[1].method_id == "Magic3D"
