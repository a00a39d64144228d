"""Correlation metrics, subjective-score screening and report tables."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.optimize import least_squares
from scipy.stats import kendalltau, kurtosis, pearsonr, spearmanr

from .const import (
    BASELINE_WEIGHT,
    BT500_BALANCE_RATIO,
    BT500_KURTOSIS_HIGH,
    BT500_KURTOSIS_LOW,
    BT500_REJECT_RATIO,
    LOGISTIC_MAX_ITERATIONS,
    SCORE_MAX,
    SCORE_MIN,
    TRAP_DUPLICATE_THRESHOLD,
    TRAP_LOW_THRESHOLD,
)
from .exceptions import (
    AnnotationParseError,
    ArgumentError,
    ConfigurationError,
    DegenerateFeatureError,
    FeatureDataError,
    UndefinedCorrelationError,
)
from .features import DatasetManifest, FeatureBundle
from .helpers import header_lines

_LOGGER = logging.getLogger(__name__)

ANNOTATION_COLUMNS = ["subject_id", "sample_id", "dimension", "score"]
LOGISTIC_MIN_SAMPLES = 5
NORM_FLOOR = 1e-12
GROUP_ALL = "all"
GROUP_CATEGORY = "category"
GROUP_METHOD = "method"


def _paired(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ArgumentError(f"length mismatch: {x.size} != {y.size}")
    if x.size < 2:
        raise ArgumentError(f"need at least 2 paired values, got {x.size}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ArgumentError("non-finite values in correlation input")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    return x, y


def plcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson linear correlation."""
    return float(pearsonr(*_paired(x, y)).statistic)


def srcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation; ties share their mean rank."""
    return float(spearmanr(*_paired(x, y)).statistic)


def krcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Kendall tau-b."""
    return float(kendalltau(*_paired(x, y), variant="b").statistic)


def correlations(x: Sequence[float], y: Sequence[float]) -> dict[str, float]:
    """PLCC, SRCC and KRCC of one pair of vectors."""
    return {"plcc": plcc(x, y), "srcc": srcc(x, y), "krcc": krcc(x, y)}


def logistic5(x: np.ndarray, b1: float, b2: float, b3: float, b4: float, b5: float) -> np.ndarray:
    """b1 * (1/2 - 1/(1 + exp(b2 (x - b3)))) + b4 x + b5."""
    return b1 * (0.5 - 1.0 / (1.0 + np.exp(b2 * (x - b3)))) + b4 * x + b5


@dataclass
class LogisticFit:
    """Result of fitting the five-parameter logistic."""

    mapped: np.ndarray
    params: np.ndarray
    converged: bool
    residual: float


def logistic_map(preds: Sequence[float], mos: Sequence[float]) -> LogisticFit:
    """Map predictions onto the MOS scale with a five-parameter logistic.

    The fit starts from the linear least-squares line (b4, b5) with a flat
    sigmoid (b1 = 0) centred on the prediction mean, slope 1 / std. It runs
    Levenberg-Marquardt with a cap of 200 function evaluations.
    """
    x = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(mos, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ArgumentError(f"length mismatch: {x.size} != {y.size}")
    if x.size < LOGISTIC_MIN_SAMPLES:
        raise ArgumentError(
            f"logistic mapping needs at least {LOGISTIC_MIN_SAMPLES} samples, got {x.size}"
        )
    if np.ptp(x) == 0:
        _LOGGER.warning("Constant predictions, logistic mapping is degenerate")
        level = float(y.mean())
        return LogisticFit(
            np.full_like(y, level),
            np.array([0.0, 1.0, float(x[0]), 0.0, level]),
            False,
            float(np.sqrt(np.mean((y - level) ** 2))),
        )
    slope, intercept = np.polyfit(x, y, 1)
    start = np.array([0.0, 1.0 / x.std(), x.mean(), slope, intercept])

    def residuals(beta: np.ndarray) -> np.ndarray:
        return logistic5(x, *beta) - y

    result = least_squares(residuals, start, method="lm", max_nfev=LOGISTIC_MAX_ITERATIONS)
    mapped = logistic5(x, *result.x)
    if not result.success:
        _LOGGER.warning("Logistic mapping did not converge: %s", result.message)
    return LogisticFit(
        mapped,
        result.x,
        bool(result.success),
        float(np.sqrt(np.mean((mapped - y) ** 2))),
    )


@dataclass
class AnnotationMatrix:
    """Raw subjective scores, subjects x samples x dimensions, NaN where unrated."""

    scores: np.ndarray
    subject_ids: list[str]
    sample_ids: list[str]
    dimension_names: list[str]
    low_quality_ids: list[str] = field(default_factory=list)
    duplicate_pairs: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Validate shape, scale and trapping ids."""
        expected = (len(self.subject_ids), len(self.sample_ids), len(self.dimension_names))
        if self.scores.shape != expected:
            raise ArgumentError(f"scores {self.scores.shape} do not match ids {expected}")
        rated = self.scores[~np.isnan(self.scores)]
        if rated.size and (
            rated.min() < SCORE_MIN
            or rated.max() > SCORE_MAX
            or not np.array_equal(rated, np.round(rated))
        ):
            raise FeatureDataError(f"scores must be integers in {SCORE_MIN}..{SCORE_MAX}")
        known = set(self.sample_ids)
        for sample_id in self.trapping_ids:
            if sample_id not in known:
                raise ConfigurationError(f"trapping sample {sample_id} not in annotations")

    @property
    def trapping_ids(self) -> list[str]:
        """Sentinels plus the second member of each duplicate pair."""
        ids = list(self.low_quality_ids)
        for first, second in self.duplicate_pairs:
            ids.extend(item for item in (first, second) if item not in ids)
        return ids

    @property
    def excluded_ids(self) -> set[str]:
        """Ids left out of BT.500 screening and of the labels."""
        return set(self.low_quality_ids) | {second for _, second in self.duplicate_pairs}

    def sample_index(self, sample_id: str) -> int:
        """Column of a sample."""
        return self.sample_ids.index(sample_id)

    def with_trapping(
        self, low_quality_ids: Iterable[str], duplicate_pairs: Iterable[Sequence[str]]
    ) -> AnnotationMatrix:
        """Same scores with other trapping flags."""
        return AnnotationMatrix(
            self.scores,
            self.subject_ids,
            self.sample_ids,
            self.dimension_names,
            list(low_quality_ids),
            [(str(a), str(b)) for a, b in duplicate_pairs],
        )


def _leading_comments(path: Path) -> int:
    count = 0
    with path.open() as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            count += 1
    return count


def load_annotations(
    path: str | Path,
    dimension_names: Sequence[str] | None = None,
    low_quality_ids: Iterable[str] = (),
    duplicate_pairs: Iterable[Sequence[str]] = (),
) -> AnnotationMatrix:
    """Read a (subject_id, sample_id, dimension, score) CSV."""
    path = Path(path)
    offset = _leading_comments(path)
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True, comment="#"
        )
    except pd.errors.EmptyDataError as ex:
        raise AnnotationParseError(offset + 1, "empty annotation file") from ex
    missing = [column for column in ANNOTATION_COLUMNS if column not in frame.columns]
    if missing:
        raise AnnotationParseError(offset + 1, f"missing columns {missing}")
    if frame.empty:
        raise AnnotationParseError(offset + 2, "no annotation rows")
    allowed = set(dimension_names) if dimension_names else None
    seen: set[tuple[str, str, str]] = set()
    values = np.empty(len(frame))
    for row, (subject, sample, dimension, score) in enumerate(
        frame[ANNOTATION_COLUMNS].itertuples(index=False, name=None)
    ):
        line = offset + row + 2
        if not (subject and sample and dimension):
            raise AnnotationParseError(line, "empty id field")
        if allowed is not None and dimension not in allowed:
            raise AnnotationParseError(line, f"unknown dimension {dimension}")
        try:
            value = int(score)
        except ValueError as ex:
            raise AnnotationParseError(line, f"score {score!r} is not an integer") from ex
        if not SCORE_MIN <= value <= SCORE_MAX:
            raise AnnotationParseError(line, f"score {value} outside {SCORE_MIN}..{SCORE_MAX}")
        key = (subject, sample, dimension)
        if key in seen:
            raise AnnotationParseError(line, f"duplicate rating {key}")
        seen.add(key)
        values[row] = value
    subject_codes, subjects = pd.factorize(frame["subject_id"])
    sample_codes, samples = pd.factorize(frame["sample_id"])
    names = list(dimension_names) if dimension_names else list(pd.unique(frame["dimension"]))
    dimension_codes = frame["dimension"].map({name: i for i, name in enumerate(names)})
    scores = np.full((len(subjects), len(samples), len(names)), np.nan)
    scores[subject_codes, sample_codes, dimension_codes.to_numpy()] = values
    _LOGGER.info(
        "Loaded %s ratings from %s subjects on %s samples", len(frame), len(subjects), len(samples)
    )
    return AnnotationMatrix(
        scores,
        list(subjects),
        list(samples),
        names,
        list(low_quality_ids),
        [(str(a), str(b)) for a, b in duplicate_pairs],
    )


@dataclass
class ScreeningResult:
    """Retained subjects and the reason each rejected subject was dropped."""

    retained: list[str]
    rejected: dict[str, str] = field(default_factory=dict)

    def report(self) -> pd.DataFrame:
        """One row per subject."""
        rows = [{"subject_id": subject, "status": "retained", "reason": ""} for subject in self.retained]
        rows += [
            {"subject_id": subject, "status": "rejected", "reason": reason}
            for subject, reason in self.rejected.items()
        ]
        return pd.DataFrame(rows, columns=["subject_id", "status", "reason"])


def _subject_rows(raw: AnnotationMatrix, subjects: Sequence[str] | None) -> list[int]:
    if subjects is None:
        return list(range(len(raw.subject_ids)))
    return [raw.subject_ids.index(subject) for subject in subjects]


def screen_trapping(
    raw: AnnotationMatrix,
    t_low: float = TRAP_LOW_THRESHOLD,
    t_dup: float = TRAP_DUPLICATE_THRESHOLD,
) -> ScreeningResult:
    """Reject subjects who rate the sentinel too high or a duplicate pair inconsistently."""
    if not raw.low_quality_ids and not raw.duplicate_pairs:
        raise ConfigurationError("no trapping samples flagged")
    result = ScreeningResult([])
    for row, subject in enumerate(raw.subject_ids):
        reason = ""
        for sentinel in raw.low_quality_ids:
            scores = raw.scores[row, raw.sample_index(sentinel)]
            if np.any(scores[~np.isnan(scores)] > t_low):
                reason = f"sentinel {sentinel} rated above {t_low:g}"
                break
        if not reason:
            for first, second in raw.duplicate_pairs:
                gap = np.abs(
                    raw.scores[row, raw.sample_index(first)]
                    - raw.scores[row, raw.sample_index(second)]
                )
                if np.any(gap[~np.isnan(gap)] > t_dup):
                    reason = f"duplicate pair {first}/{second} differs by more than {t_dup:g}"
                    break
        if reason:
            _LOGGER.debug("Rejected %s: %s", subject, reason)
            result.rejected[subject] = reason
        else:
            result.retained.append(subject)
    return result


def screen_bt500(raw: AnnotationMatrix, subjects: Sequence[str] | None = None) -> ScreeningResult:
    """Per-subject outlier rejection by counting scores outside kurtosis-dependent bounds.

    A stimulus is one (sample, dimension) pair. Its bounds are mean +- 2 sigma when
    the kurtosis lies in [2, 4], else mean +- sqrt(20) sigma. A subject with P
    scores above and Q below is rejected iff (P + Q) / scored > 0.05 and
    |P - Q| / (P + Q) < 0.3. Trapping samples take no part.
    """
    rows = _subject_rows(raw, subjects)
    if len(rows) < 3:
        raise ConfigurationError(f"BT.500 screening needs at least 3 subjects, got {len(rows)}")
    excluded = raw.excluded_ids
    columns = [i for i, sample_id in enumerate(raw.sample_ids) if sample_id not in excluded]
    scores = raw.scores[np.ix_(rows, columns)].reshape(len(rows), -1)
    above = np.zeros(len(rows), dtype=int)
    below = np.zeros(len(rows), dtype=int)
    for stimulus in scores.T:
        rated = ~np.isnan(stimulus)
        values = stimulus[rated]
        if values.size < 2:
            continue
        sigma = values.std(ddof=1)
        if sigma == 0:
            continue
        beta2 = kurtosis(values, fisher=False)
        spread = 2.0 if BT500_KURTOSIS_LOW <= beta2 <= BT500_KURTOSIS_HIGH else np.sqrt(20.0)
        mean = values.mean()
        above[rated] += values > mean + spread * sigma
        below[rated] += values < mean - spread * sigma
    scored = (~np.isnan(scores)).sum(axis=1)
    result = ScreeningResult([])
    for index, row in enumerate(rows):
        subject = raw.subject_ids[row]
        p, q = int(above[index]), int(below[index])
        if p + q and scored[index] and (p + q) / scored[index] > BT500_REJECT_RATIO and abs(
            p - q
        ) / (p + q) < BT500_BALANCE_RATIO:
            reason = f"BT.500 outlier (P={p}, Q={q} of {scored[index]})"
            _LOGGER.debug("Rejected %s: %s", subject, reason)
            result.rejected[subject] = reason
        else:
            result.retained.append(subject)
    return result


@dataclass
class SampleLabel:
    """Screened mean opinion scores of one sample."""

    sample_id: str
    mos: np.ndarray
    retained_subject_count: int


def compute_mos(raw: AnnotationMatrix, retained: Sequence[str]) -> list[SampleLabel]:
    """Average the retained subjects' scores; trapping samples are skipped."""
    if not retained:
        raise ConfigurationError("no retained subjects")
    rows = _subject_rows(raw, retained)
    excluded = raw.excluded_ids
    labels = []
    for column, sample_id in enumerate(raw.sample_ids):
        if sample_id in excluded:
            continue
        scores = raw.scores[rows, column]
        count = int((~np.isnan(scores)).any(axis=1).sum())
        if count == 0:
            _LOGGER.warning("No retained ratings for %s, sample skipped", sample_id)
            continue
        unrated = np.isnan(scores).all(axis=0)
        if unrated.any():
            missing = [raw.dimension_names[i] for i in np.flatnonzero(unrated)]
            raise FeatureDataError(f"{sample_id}: no retained rating for {missing}")
        labels.append(SampleLabel(sample_id, np.nanmean(scores, axis=0), count))
    return labels


def labels_frame(labels: Sequence[SampleLabel], dimension_names: Sequence[str]) -> pd.DataFrame:
    """Labels as a sample_id + one-column-per-dimension table."""
    frame = pd.DataFrame(
        [label.mos for label in labels], columns=list(dimension_names), dtype=np.float64
    )
    frame.insert(0, "sample_id", [label.sample_id for label in labels])
    frame["retained_subjects"] = [label.retained_subject_count for label in labels]
    return frame


def write_table(frame: pd.DataFrame, path: str | Path, config: dict[str, Any]) -> None:
    """Write a CSV (and its JSON twin) behind the config hash and seed header."""
    path = Path(path)
    with path.open("w") as handle:
        handle.write("\n".join(header_lines(config)) + "\n")
        frame.to_csv(handle, index=False, float_format="%.9g")
    path.with_suffix(".json").write_text(frame.to_json(orient="records", indent=2) + "\n")


def read_table(path: str | Path) -> pd.DataFrame:
    """Read a CSV written by write_table."""
    return pd.read_csv(path, comment="#", dtype={"sample_id": str})


def _attach_groups(
    frame: pd.DataFrame, manifest: DatasetManifest
) -> pd.DataFrame:
    frame = frame.copy()
    frame["method"] = [manifest.sample(sample_id).method_id for sample_id in frame["sample_id"]]
    frame["category"] = [manifest.category_of(sample_id) for sample_id in frame["sample_id"]]
    return frame


def report_tables(
    values: pd.DataFrame, manifest: DatasetManifest, dimension_names: Sequence[str] | None = None
) -> pd.DataFrame:
    """Per-method x per-category means, ranked across the categories of each method.

    Higher values rank first; ties share the minimum rank.
    """
    names = list(dimension_names or manifest.dimension_names)
    grouped = _attach_groups(values, manifest)
    means = grouped.groupby(["method", "category"], sort=False)[names].mean().reset_index()
    table = means.melt(
        id_vars=["method", "category"], value_vars=names, var_name="dimension", value_name="value"
    )
    table["rank"] = (
        table.groupby(["dimension", "method"], sort=False)["value"]
        .rank(method="min", ascending=False)
        .astype(int)
    )
    return table[["dimension", "method", "category", "value", "rank"]]


def correlation_tables(
    predictions: pd.DataFrame,
    labels: pd.DataFrame,
    manifest: DatasetManifest | None = None,
    group_by: str | None = None,
    logistic: bool = False,
    dimension_names: Sequence[str] | None = None,
) -> pd.DataFrame:
    """PLCC/SRCC/KRCC per dimension, overall or per category or method.

    With logistic mapping, PLCC is measured on the mapped predictions.
    Undefined correlations are reported as NaN.
    """
    if group_by not in (None, GROUP_CATEGORY, GROUP_METHOD):
        raise ArgumentError(f"unknown grouping {group_by}")
    if group_by and manifest is None:
        raise ArgumentError("grouped correlations need a manifest")
    names = list(dimension_names or (manifest.dimension_names if manifest else []))
    merged = predictions.merge(labels, on="sample_id", suffixes=("_pred", "_mos"))
    if merged.empty:
        raise FeatureDataError("no sample has both a prediction and a label")
    if group_by:
        merged = _attach_groups(merged, manifest)
        groups = merged.groupby(group_by, sort=False)
    else:
        groups = [(GROUP_ALL, merged)]
    rows = []
    for name in names:
        for group, part in groups:
            pred = part[f"{name}_pred"].to_numpy(dtype=np.float64)
            mos = part[f"{name}_mos"].to_numpy(dtype=np.float64)
            row = {"dimension": name, "group": group, "n": len(part)}
            try:
                linear = pred
                if logistic and len(part) >= LOGISTIC_MIN_SAMPLES:
                    linear = logistic_map(pred, mos).mapped
                row.update(correlations(pred, mos))
                row["plcc"] = plcc(linear, mos)
            except (UndefinedCorrelationError, ArgumentError) as ex:
                _LOGGER.warning("%s / %s: %s", name, group, ex)
                row.update(plcc=np.nan, srcc=np.nan, krcc=np.nan)
            rows.append(row)
    return pd.DataFrame(rows, columns=["dimension", "group", "n", "plcc", "srcc", "krcc"])


def mos_histogram(
    labels: pd.DataFrame, dimension_names: Sequence[str], bins: int = SCORE_MAX + 1
) -> pd.DataFrame:
    """Counts of MOS values per dimension over equal-width bins of the score scale."""
    rows = []
    for name in dimension_names:
        counts, edges = np.histogram(
            labels[name].to_numpy(dtype=np.float64), bins=bins, range=(SCORE_MIN, SCORE_MAX)
        )
        rows.extend(
            {"dimension": name, "bin_left": left, "bin_right": right, "count": int(count)}
            for left, right, count in zip(edges[:-1], edges[1:], counts)
        )
    return pd.DataFrame(rows, columns=["dimension", "bin_left", "bin_right", "count"])


def baseline_cosine_score(bundle: FeatureBundle, weight: float = BASELINE_WEIGHT) -> float:
    """View-averaged w * max(cos(mean patch, EOT), 0)."""
    view_means = bundle.views.astype(np.float64).mean(axis=1)
    eot = bundle.eot_feature.astype(np.float64)
    view_norms = np.linalg.norm(view_means, axis=1)
    eot_norm = np.linalg.norm(eot)
    if eot_norm < NORM_FLOOR or np.any(view_norms < NORM_FLOOR):
        raise DegenerateFeatureError(f"{bundle.sample_id}: zero feature in cosine baseline")
    cosines = view_means @ eot / (view_norms * eot_norm)
    return float(np.mean(weight * np.maximum(cosines, 0.0)))
