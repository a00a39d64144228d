"""Statistics tests."""
from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest

from hyperscore.exceptions import (
    AnnotationParseError,
    ArgumentError,
    ConfigurationError,
    DegenerateFeatureError,
    FeatureDataError,
    UndefinedCorrelationError,
)
from hyperscore.features import DatasetManifest, FeatureBundle, ManifestSample
from hyperscore.stats import (
    AnnotationMatrix,
    baseline_cosine_score,
    compute_mos,
    correlation_tables,
    krcc,
    labels_frame,
    load_annotations,
    logistic_map,
    mos_histogram,
    plcc,
    read_table,
    report_tables,
    screen_bt500,
    screen_trapping,
    srcc,
    write_table,
)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    return np.array(
        [
            1 + sum(other < value for other in values) + (sum(other == value for other in values) - 1) / 2
            for value in values
        ]
    )


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx, dy = x - x.mean(), y - y.mean()
    return float((dx * dy).sum() / np.sqrt((dx * dx).sum() * (dy * dy).sum()))


def _tau_b(x: np.ndarray, y: np.ndarray) -> float:
    concordant = discordant = tied_x = tied_y = pairs = 0
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            pairs += 1
            sign = np.sign(x[i] - x[j]) * np.sign(y[i] - y[j])
            concordant += sign > 0
            discordant += sign < 0
            tied_x += x[i] == x[j]
            tied_y += y[i] == y[j]
    return (concordant - discordant) / np.sqrt((pairs - tied_x) * (pairs - tied_y))


def test_plcc() -> None:
    """Test Pearson correlation."""
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert plcc(x, 2 * x) == pytest.approx(1.0)
    assert plcc(x, -x) == pytest.approx(-1.0)
    assert plcc([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    assert plcc(x, [1, 4, 2, 3]) == pytest.approx(plcc(3 * x + 7, [1, 4, 2, 3]), abs=1e-12)
    with pytest.raises(UndefinedCorrelationError):
        plcc(x, np.ones(4))
    with pytest.raises(ArgumentError):
        plcc([1.0], [2.0])
    with pytest.raises(ArgumentError):
        plcc([1.0, 2.0], [1.0, 2.0, 3.0])


def test_rank_correlations_match_oracles() -> None:
    """Test SRCC and KRCC against brute-force definitions on 1000 tied integer fixtures."""
    rng = np.random.default_rng(0)
    checked = drawn = 0
    while checked < 1000:
        drawn += 1
        size = int(rng.integers(3, 13))
        x = rng.integers(0, 5, size).astype(float)
        y = rng.integers(0, 5, size).astype(float)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        assert srcc(x, y) == pytest.approx(_pearson(_average_ranks(x), _average_ranks(y)), abs=1e-12)
        assert krcc(x, y) == pytest.approx(_tau_b(x, y), abs=1e-12)
        checked += 1
    assert drawn < 1100


def test_rank_correlations() -> None:
    """Test rank correlations at their extremes and under monotone maps."""
    x = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0])
    y = np.array([2.0, 7.0, 1.0, 8.0, 2.0, 8.0, 1.0, 8.0])
    assert srcc(x, x**3) == pytest.approx(1.0)
    assert srcc(x, -x) == pytest.approx(-1.0)
    assert krcc(x, x) == pytest.approx(1.0)
    assert krcc(x, -x) == pytest.approx(-1.0)
    assert srcc(np.exp(x), y) == srcc(x, y)
    assert krcc(x, 10 * y + 3) == krcc(x, y)
    with pytest.raises(UndefinedCorrelationError):
        krcc(np.ones(5), x[:5])


def test_logistic_map() -> None:
    """Test the five-parameter logistic fit."""
    mos = np.linspace(1.0, 9.0, 20)
    identity = logistic_map(mos, mos)
    assert identity.residual <= 1e-6
    np.testing.assert_allclose(identity.mapped, mos, atol=1e-6)

    affine = logistic_map(2 * mos + 1, mos)
    assert affine.residual <= 1e-3

    constant = logistic_map(np.full(6, 3.0), np.arange(6.0))
    assert not constant.converged
    np.testing.assert_array_equal(constant.mapped, 2.5)

    with pytest.raises(ArgumentError):
        logistic_map([1, 2, 3, 4], [1, 2, 3, 4])


def _trapping_matrix() -> AnnotationMatrix:
    samples = ["s0", "s1", "dup", "lq"]
    scores = np.array(
        [
            [5, 6, 5, 0],  # consistent
            [5, 6, 5, 9],  # likes the sentinel
            [2, 6, 5, 3],  # gap of exactly 3
            [1, 6, 5, 0],  # gap of 4
        ],
        dtype=float,
    )[:, :, None]
    return AnnotationMatrix(
        scores, ["a", "b", "c", "d"], samples, ["overall"], ["lq"], [("s0", "dup")]
    )


def test_screen_trapping() -> None:
    """Test sentinel and duplicate-pair screening."""
    raw = _trapping_matrix()
    result = screen_trapping(raw)
    assert result.retained == ["a", "c"]
    assert set(result.rejected) == {"b", "d"}
    report = result.report()
    assert list(report.columns) == ["subject_id", "status", "reason"]
    assert report.set_index("subject_id").loc["b", "status"] == "rejected"

    assert screen_trapping(raw, t_dup=4).retained == ["a", "c", "d"]
    with pytest.raises(ConfigurationError):
        screen_trapping(raw.with_trapping([], []))
    with pytest.raises(ConfigurationError):
        raw.with_trapping(["missing"], [])


def test_constant_rater_caught_by_sentinel() -> None:
    """Test a subject who always answers 10 fails the low-quality sentinel."""
    scores = np.array([[2, 3, 1, 2, 0], [3, 2, 2, 1, 1], [10, 10, 10, 10, 10]], dtype=float)
    raw = AnnotationMatrix(
        scores[:, :, None], ["a", "b", "c"], ["s0", "s1", "s2", "s3", "lq"], ["overall"], ["lq"]
    )
    assert screen_trapping(raw).retained == ["a", "b"]


def test_bt500_one_sided_and_two_sided_outliers() -> None:
    """Test the balance rule keeps a one-sided outlier and rejects a two-sided one."""
    # subject-9 lands above every bound (P=10, Q=0); |P - Q| / (P + Q) = 1
    # is never below the balance ratio, so only the sentinel can catch it
    one_sided = screen_bt500(_bt500_matrix(10, [0] * 10))
    assert one_sided.rejected == {}
    assert "subject-9" in one_sided.retained

    two_sided = screen_bt500(_bt500_matrix(10, [1, 0] * 5))
    assert list(two_sided.rejected) == ["subject-9"]
    assert "P=5, Q=5" in two_sided.rejected["subject-9"]


def _bt500_matrix(stimuli: int, patterns: list[int]) -> AnnotationMatrix:
    scores = np.full((10, stimuli), 5.0)
    for column, pattern in enumerate(patterns):
        if pattern == 0:
            scores[:9, column] = [0, 0, 0, 0, 4, 4, 4, 4, 4]
            scores[9, column] = 10
        else:
            scores[:9, column] = [10, 10, 10, 10, 6, 6, 6, 6, 6]
            scores[9, column] = 0
    return AnnotationMatrix(
        scores[:, :, None],
        [f"subject-{i}" for i in range(10)],
        [f"s{i}" for i in range(stimuli)],
        ["overall"],
    )


def test_screen_bt500() -> None:
    """Test the balanced-outlier rule."""
    erratic = _bt500_matrix(10, [i % 2 for i in range(10)])
    result = screen_bt500(erratic)
    assert list(result.rejected) == ["subject-9"]
    assert "P=5, Q=5" in result.rejected["subject-9"]
    assert len(result.retained) == 9

    boundary = _bt500_matrix(40, [0, 1])
    assert screen_bt500(boundary).rejected == {}

    uniform = AnnotationMatrix(
        np.full((4, 6, 2), 7.0), list("abcd"), [f"s{i}" for i in range(6)], ["x", "y"]
    )
    assert screen_bt500(uniform).retained == list("abcd")
    with pytest.raises(ConfigurationError):
        screen_bt500(uniform, ["a", "b"])


def test_compute_mos() -> None:
    """Test averaging over retained subjects."""
    raw = AnnotationMatrix(
        np.array([[[5.0], [1.0]], [[6.0], [2.0]], [[7.0], [9.0]]]),
        ["a", "b", "c"],
        ["s0", "s1"],
        ["overall"],
    )
    labels = compute_mos(raw, ["a", "b", "c"])
    assert [label.mos[0] for label in labels] == [6.0, 4.0]
    assert labels[0].retained_subject_count == 3
    assert compute_mos(raw, ["b"])[1].mos[0] == 2.0
    assert [label.mos[0] for label in compute_mos(raw, ["a", "b"])] == [5.5, 1.5]
    reordered = compute_mos(raw, ["c", "a", "b"])
    assert [label.mos[0] for label in reordered] == [6.0, 4.0]
    with pytest.raises(ConfigurationError):
        compute_mos(raw, [])

    trapped = _trapping_matrix()
    assert [label.sample_id for label in compute_mos(trapped, ["a"])] == ["s0", "s1"]


def test_load_annotations(tmp_path) -> None:
    """Test CSV ingestion and its line-numbered errors."""
    path = tmp_path / "scores.csv"
    path.write_text(
        "# collected in two sessions\n"
        "subject_id,sample_id,dimension,score\n"
        "a,s0,geometry,4\n"
        "a,s0,texture,6\n"
        "b,s0,geometry,5\n"
        "b,s1,texture,10\n"
    )
    raw = load_annotations(path, ["geometry", "texture"])
    assert raw.subject_ids == ["a", "b"]
    assert raw.sample_ids == ["s0", "s1"]
    assert raw.scores.shape == (2, 2, 2)
    assert raw.scores[1, 1, 1] == 10
    assert np.isnan(raw.scores[0, 1, 0])

    def error_line(body: str, names=None) -> int:
        path.write_text(body)
        with pytest.raises(AnnotationParseError) as info:
            load_annotations(path, names)
        return info.value.line

    header = "subject_id,sample_id,dimension,score\n"
    assert error_line("") == 1
    assert error_line("subject_id,sample_id,score\na,s0,1\n") == 1
    assert error_line(header + "a,s0,geometry,4\na,s1,geometry,x\n") == 3
    assert error_line(header + "a,s0,geometry,11\n") == 2
    assert error_line("# note\n" + header + "a,s0,geometry,4\na,s0,geometry,5\n") == 4
    assert error_line(header + "a,s0,color,4\n", ["geometry"]) == 2
    assert error_line(header + "a,,geometry,4\n") == 2


def _manifest() -> DatasetManifest:
    samples = [
        ManifestSample("a1", "p0", "A", "a1.hsf"),
        ManifestSample("a2", "p1", "A", "a2.hsf"),
        ManifestSample("a3", "p1", "A", "a3.hsf"),
        ManifestSample("b1", "p0", "B", "b1.hsf"),
        ManifestSample("b2", "p1", "B", "b2.hsf"),
    ]
    return DatasetManifest(samples, {"p0": "Basic", "p1": "Action"}, ["overall"])


def test_report_tables() -> None:
    """Test per-method category means and their ranks."""
    values = pd.DataFrame(
        {"sample_id": ["a1", "a2", "a3", "b1", "b2"], "overall": [2.0, 6.0, 8.0, 3.0, 3.0]}
    )
    table = report_tables(values, _manifest())
    cells = {(row.method, row.category): (row.value, row.rank) for row in table.itertuples()}
    assert cells[("A", "Basic")] == (2.0, 2)
    assert cells[("A", "Action")] == (7.0, 1)
    assert cells[("B", "Basic")] == (3.0, 1)
    assert cells[("B", "Action")] == (3.0, 1)

    single = report_tables(values.iloc[:1], _manifest())
    assert single[["method", "category", "value", "rank"]].values.tolist() == [["A", "Basic", 2.0, 1]]


def test_correlation_tables() -> None:
    """Test overall and grouped correlation reports."""
    labels = pd.DataFrame(
        {"sample_id": ["a1", "a2", "a3", "b1", "b2"], "overall": [1.0, 2.0, 3.0, 4.0, 5.0]}
    )
    preds = labels.assign(overall=[2.0, 4.0, 6.0, 8.0, 10.0])
    overall = correlation_tables(preds, labels, dimension_names=["overall"])
    assert overall.loc[0, "group"] == "all"
    assert overall.loc[0, "n"] == 5
    assert overall.loc[0, "plcc"] == pytest.approx(1.0)
    assert overall.loc[0, "krcc"] == pytest.approx(1.0)

    mapped = correlation_tables(preds, labels, dimension_names=["overall"], logistic=True)
    assert mapped.loc[0, "plcc"] == pytest.approx(1.0, abs=1e-6)

    by_method = correlation_tables(preds, labels, _manifest(), group_by="method")
    assert list(by_method["group"]) == ["A", "B"]
    assert by_method.loc[1, "srcc"] == pytest.approx(1.0)

    flat = preds.assign(overall=3.0)
    assert np.isnan(correlation_tables(flat, labels, dimension_names=["overall"]).loc[0, "plcc"])
    with pytest.raises(ArgumentError):
        correlation_tables(preds, labels, group_by="category")
    with pytest.raises(FeatureDataError):
        correlation_tables(preds.assign(sample_id=list("vwxyz")), labels, dimension_names=["overall"])


def test_tables_on_disk(tmp_path) -> None:
    """Test the CSV header, the JSON twin and the histogram."""
    raw = _trapping_matrix()
    labels = labels_frame(compute_mos(raw, ["a", "c"]), ["overall"])
    path = tmp_path / "labels.csv"
    write_table(labels, path, {"seed": 4})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash: ")
    assert lines[1] == "# seed: 4"
    loaded = read_table(path)
    assert list(loaded["sample_id"]) == ["s0", "s1"]
    assert loaded["overall"].tolist() == [3.5, 6.0]
    assert json.loads(path.with_suffix(".json").read_text())[0]["retained_subjects"] == 2

    histogram = mos_histogram(loaded, ["overall"])
    assert len(histogram) == 11
    assert histogram["count"].sum() == 2


def _bundle(views: list[list[float]], eot: list[float]) -> FeatureBundle:
    return FeatureBundle(
        "b",
        "p",
        "m",
        np.array(views, dtype=np.float64)[:, None, :],
        np.array([eot], dtype=np.float64),
        0,
        tuple((0.0, float(i)) for i in range(len(views))),
    )


def test_baseline_cosine_score() -> None:
    """Test the view-averaged cosine baseline."""
    assert baseline_cosine_score(_bundle([[0.3, 0.4]], [0.3, 0.4])) == pytest.approx(2.5)
    assert baseline_cosine_score(_bundle([[1.0, 0.0]], [0.0, 1.0])) == 0.0
    assert baseline_cosine_score(_bundle([[-1.0, 0.0]], [1.0, 0.0])) == 0.0
    views = [[0.8, 0.6], [0.4, np.sqrt(1 - 0.16)]]
    assert baseline_cosine_score(_bundle(views, [1.0, 0.0])) == pytest.approx(1.5)
    with pytest.raises(DegenerateFeatureError):
        baseline_cosine_score(_bundle([[0.0, 0.0]], [1.0, 0.0]))
