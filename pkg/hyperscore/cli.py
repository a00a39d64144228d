"""Command-line entry point."""

from __future__ import annotations

import argparse
from collections.abc import Callable, Sequence
import logging
from pathlib import Path
import sys
from typing import Any

import numpy as np
import pandas as pd

from . import __version__
from .config import load_config, setup_logging
from .const import (
    CONF_ANNOTATIONS,
    CONF_DIMENSIONS,
    CONF_DIMS,
    CONF_DUPLICATE_PAIRS,
    CONF_FEATURE_DIM,
    CONF_FEATURE_DIR,
    CONF_LABEL_MEAN,
    CONF_LABEL_STD,
    CONF_LABELS,
    CONF_LOGISTIC,
    CONF_LOW_QUALITY_IDS,
    CONF_MANIFEST,
    CONF_MODES,
    CONF_NUM_METHODS,
    CONF_NUM_PROMPTS,
    CONF_OUTPUT_DIR,
    CONF_PATCHES,
    CONF_PATHS,
    CONF_PRECISION,
    CONF_PREDICTIONS,
    CONF_SCREENING,
    CONF_SEED,
    CONF_SYNTH,
    CONF_TEXT_TOKENS,
    CONF_TRAP_DUPLICATE,
    CONF_TRAP_LOW,
    CONF_VIEWS,
    EXIT_CONFIG,
    EXIT_OK,
    SCORE_MAX,
    SCORE_MIN,
)
from .exceptions import (
    ArgumentError,
    ConfigurationError,
    FeatureDataError,
    HyperScoreError,
    NumericalError,
)
from .features import (
    DatasetManifest,
    FeatureBundle,
    load_dataset,
    load_manifest,
    write_feature_bundle,
    write_manifest,
)
from .gradcheck import check_gradients, tiny_layout, tiny_samples
from .helpers import header_lines
from .model import ModelLayout, build_model, fusion_weight_map
from .stats import (
    GROUP_CATEGORY,
    GROUP_METHOD,
    baseline_cosine_score,
    compute_mos,
    correlation_tables,
    labels_frame,
    load_annotations,
    mos_histogram,
    read_table,
    report_tables,
    screen_bt500,
    screen_trapping,
    write_table,
)
from .synth import synth_dataset, teacher_seed
from .training import (
    LabeledSample,
    TrainConfig,
    TrainingLog,
    evaluate,
    fit,
    load_checkpoint,
    predict_samples,
    save_checkpoint,
    train_model,
)

_LOGGER = logging.getLogger(__name__)

FEATURES_DIR = "features"
WEIGHTS_DIR = "weights"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise ArgumentError(message)


def _output_dir(config: dict[str, Any]) -> Path:
    path = Path(config[CONF_PATHS][CONF_OUTPUT_DIR])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _required_path(config: dict[str, Any], key: str) -> Path:
    value = config[CONF_PATHS][key]
    if not value:
        raise ConfigurationError(f"paths.{key} is not set")
    path = Path(value)
    if not path.exists():
        raise ConfigurationError(f"paths.{key}: {path} does not exist")
    return path


def _load_bundles(config: dict[str, Any]) -> tuple[DatasetManifest, list[FeatureBundle]]:
    manifest = load_manifest(_required_path(config, CONF_MANIFEST))
    dims = config[CONF_DIMS]
    if list(manifest.dimension_names) != list(dims[CONF_DIMENSIONS]):
        raise ConfigurationError(
            f"manifest dimensions {manifest.dimension_names} != config {dims[CONF_DIMENSIONS]}"
        )
    bundles = load_dataset(manifest, _required_path(config, CONF_FEATURE_DIR))
    expected = (dims[CONF_VIEWS], dims[CONF_PATCHES], dims[CONF_TEXT_TOKENS], dims[CONF_FEATURE_DIM])
    for bundle in bundles:
        if bundle.dims != expected:
            raise ConfigurationError(
                f"{bundle.sample_id}: container dims {bundle.dims} != config {expected}"
            )
    return manifest, bundles


def _labeled(
    bundles: Sequence[FeatureBundle], labels: pd.DataFrame, dimension_names: Sequence[str]
) -> list[LabeledSample]:
    missing = [name for name in dimension_names if name not in labels.columns]
    if missing:
        raise FeatureDataError(f"labels lack dimensions {missing}")
    table = labels.set_index("sample_id")[list(dimension_names)]
    samples = []
    for bundle in bundles:
        if bundle.sample_id not in table.index:
            raise FeatureDataError(f"{bundle.sample_id}: no label")
        target = table.loc[bundle.sample_id].to_numpy(dtype=np.float32)
        if not np.isfinite(target).all():
            raise FeatureDataError(f"{bundle.sample_id}: incomplete label")
        samples.append(LabeledSample(bundle, target))
    return samples


def _training_samples(config: dict[str, Any]) -> list[LabeledSample]:
    _, bundles = _load_bundles(config)
    labels = read_table(_required_path(config, CONF_LABELS))
    return _labeled(bundles, labels, config[CONF_DIMS][CONF_DIMENSIONS])


def cmd_synth(config: dict[str, Any], args: argparse.Namespace) -> int:
    """Write toy feature containers, a manifest, teacher labels and the teacher."""
    out = _output_dir(config)
    dims = config[CONF_DIMS]
    synth = config[CONF_SYNTH]
    dataset = synth_dataset(
        ModelLayout.from_config(config),
        (dims[CONF_VIEWS], dims[CONF_PATCHES], dims[CONF_TEXT_TOKENS]),
        synth[CONF_NUM_PROMPTS],
        synth[CONF_NUM_METHODS],
        config[CONF_SEED],
        synth[CONF_LABEL_MEAN],
        synth[CONF_LABEL_STD],
    )
    features = out / FEATURES_DIR
    features.mkdir(exist_ok=True)
    for bundle, row in zip(dataset.bundles, dataset.manifest.samples):
        write_feature_bundle(bundle, features / row.feature_path)
    write_manifest(dataset.manifest, out / "manifest.json")
    labels = pd.DataFrame(dataset.targets, columns=list(dataset.manifest.dimension_names))
    labels.insert(0, "sample_id", dataset.manifest.sample_ids)
    write_table(labels, out / "labels.csv", config)
    save_checkpoint(
        dataset.teacher,
        out / "teacher.hsc",
        config,
        {"teacher_seed": teacher_seed(config[CONF_SEED]), "label_transform": dataset.transform.to_dict()},
    )
    _LOGGER.info("Wrote %s samples to %s", len(dataset.bundles), out)
    return EXIT_OK


def cmd_mos(config: dict[str, Any], args: argparse.Namespace) -> int:
    """Screen raters and write MOS labels with a screening report."""
    out = _output_dir(config)
    screening = config[CONF_SCREENING]
    names = config[CONF_DIMS][CONF_DIMENSIONS]
    raw = load_annotations(
        _required_path(config, CONF_ANNOTATIONS),
        names,
        screening[CONF_LOW_QUALITY_IDS],
        screening[CONF_DUPLICATE_PAIRS],
    )
    reports = []
    subjects = list(raw.subject_ids)
    if raw.low_quality_ids or raw.duplicate_pairs:
        trapping = screen_trapping(raw, screening[CONF_TRAP_LOW], screening[CONF_TRAP_DUPLICATE])
        subjects = trapping.retained
        reports.append(trapping.report().assign(stage="trapping"))
    else:
        _LOGGER.info("No trapping samples configured, skipping trapping screening")
    bt500 = screen_bt500(raw, subjects)
    reports.append(bt500.report().assign(stage="bt500"))
    report = pd.concat(reports, ignore_index=True)
    report = report[(report["stage"] == "bt500") | (report["status"] == "rejected")]
    labels = compute_mos(raw, bt500.retained)
    write_table(labels_frame(labels, raw.dimension_names), out / "labels.csv", config)
    write_table(report.reset_index(drop=True), out / "screening.csv", config)
    rejected = report.loc[report["status"] == "rejected", "subject_id"].tolist()
    _LOGGER.info("Kept %s of %s subjects; rejected %s", len(bt500.retained), len(raw.subject_ids), rejected)
    return EXIT_OK


def cmd_train(config: dict[str, Any], args: argparse.Namespace) -> int:
    """Train one model on the whole labelled set."""
    out = _output_dir(config)
    samples = _training_samples(config)
    settings = TrainConfig.from_config(config)
    model = build_model(ModelLayout.from_config(config), settings.seed)
    log = TrainingLog(out / "train_log.jsonl", config)
    best, _ = train_model(samples, model, settings, 0, log)
    save_checkpoint(best, out / "model.hsc", config)
    rows = [{"dimension": name, **values} for name, values in evaluate(best, samples).items()]
    write_table(pd.DataFrame(rows), out / "train_metrics.csv", config)
    return EXIT_OK


def cmd_crossval(config: dict[str, Any], args: argparse.Namespace) -> int:
    """Prompt-disjoint k-fold cross-validation."""
    out = _output_dir(config)
    samples = _training_samples(config)
    settings = TrainConfig.from_config(config)
    log = TrainingLog(out / "crossval_log.jsonl", config)
    result = fit(samples, ModelLayout.from_config(config), settings, log)
    for fold in result.folds:
        save_checkpoint(fold.model, out / f"fold_{fold.fold}.hsc", config)
    write_table(pd.DataFrame(result.report_rows()), out / "crossval_report.csv", config)
    for name, values in result.summary.items():
        _LOGGER.info(
            "%s: PLCC %.4f, SRCC %.4f, KRCC %.4f", name, values["plcc"], values["srcc"], values["krcc"]
        )
    return EXIT_OK


def cmd_score(config: dict[str, Any], args: argparse.Namespace) -> int:
    """Score samples with a checkpoint."""
    out = _output_dir(config)
    checkpoint = load_checkpoint(args.checkpoint)
    manifest, bundles = _load_bundles(config)
    by_id = {bundle.sample_id: bundle for bundle in bundles}
    ids = args.sample_ids or manifest.sample_ids
    selected = [by_id[manifest.sample(sample_id).sample_id] for sample_id in ids]
    scores = predict_samples(checkpoint.model, selected).astype(np.float64)
    frame = pd.DataFrame({"sample_id": [bundle.sample_id for bundle in selected]})
    for index, name in enumerate(checkpoint.model.layout.dimension_names):
        frame[name] = scores[:, index]
        frame[f"{name}_clamped"] = np.clip(scores[:, index], SCORE_MIN, SCORE_MAX)
    write_table(frame, out / "scores.csv", config)
    if args.dump_weights:
        weights = out / WEIGHTS_DIR
        weights.mkdir(exist_ok=True)
        for bundle in selected:
            np.save(weights / f"{bundle.sample_id}.npy", fusion_weight_map(bundle, checkpoint.model))
    return EXIT_OK


def cmd_stats(config: dict[str, Any], args: argparse.Namespace) -> int:
    """Correlation reports, score tables, MOS histogram and the cosine baseline."""
    out = _output_dir(config)
    names = config[CONF_DIMS][CONF_DIMENSIONS]
    logistic = config[CONF_MODES][CONF_LOGISTIC]
    manifest = load_manifest(_required_path(config, CONF_MANIFEST))
    labels = read_table(_required_path(config, CONF_LABELS))
    predictions = read_table(_required_path(config, CONF_PREDICTIONS))
    write_table(
        correlation_tables(predictions, labels, manifest, None, logistic, names),
        out / "correlations.csv",
        config,
    )
    for group_by in (GROUP_CATEGORY, GROUP_METHOD):
        write_table(
            correlation_tables(predictions, labels, manifest, group_by, logistic, names),
            out / f"correlations_by_{group_by}.csv",
            config,
        )
    write_table(report_tables(labels, manifest, names), out / "mos_table.csv", config)
    write_table(report_tables(predictions, manifest, names), out / "prediction_table.csv", config)
    write_table(mos_histogram(labels, names), out / "mos_histogram.csv", config)
    if config[CONF_PATHS][CONF_FEATURE_DIR]:
        bundles = load_dataset(manifest, _required_path(config, CONF_FEATURE_DIR))
        baseline = pd.DataFrame({"sample_id": [bundle.sample_id for bundle in bundles]})
        values = [baseline_cosine_score(bundle) for bundle in bundles]
        for name in names:
            baseline[name] = values
        write_table(baseline, out / "baseline_scores.csv", config)
        write_table(
            correlation_tables(baseline, labels, manifest, None, logistic, names),
            out / "baseline_correlations.csv",
            config,
        )
    return EXIT_OK


def cmd_gradcheck(config: dict[str, Any], args: argparse.Namespace) -> int:
    """Finite-difference check of the analytic gradients on the tiny layout."""
    out = _output_dir(config)
    layout = tiny_layout(ModelLayout.from_config(config))
    seed = config[CONF_SEED]
    settings = TrainConfig.from_config(config)
    report = check_gradients(
        build_model(layout, seed, np.float64),
        tiny_samples(seed, 3, layout),
        settings,
        config[CONF_MODES][CONF_PRECISION],
    )
    write_table(pd.DataFrame(report.rows()), out / "gradcheck.csv", config)
    for row in report.rows():
        _LOGGER.info(
            "%-16s %-24s %.3e %s",
            row["group"],
            row["tensor"],
            row["worst_relative_error"],
            "ok" if row["passed"] else "FAIL",
        )
    if not report.passed:
        raise NumericalError(
            f"gradient check failed: worst relative error {report.worst_error:.3e}"
        )
    return EXIT_OK


COMMANDS: dict[str, Callable[[dict[str, Any], argparse.Namespace], int]] = {
    "synth": cmd_synth,
    "mos": cmd_mos,
    "train": cmd_train,
    "crossval": cmd_crossval,
    "score": cmd_score,
    "stats": cmd_stats,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    """Argument parser; dotted `--section.key value` overrides are split off first."""
    parser = _Parser(prog="hyperscore", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-c", "--config", help="JSON run configuration")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, func in COMMANDS.items():
        command = commands.add_parser(name, help=func.__doc__)
        if name == "score":
            command.add_argument("--checkpoint", required=True)
            command.add_argument("--dump-weights", action="store_true")
            command.add_argument("sample_ids", nargs="*")
    return parser


def split_overrides(argv: Sequence[str]) -> tuple[list[str], list[str]]:
    """Separate `--section.key value` pairs from the ordinary arguments."""
    rest: list[str] = []
    overrides: list[str] = []
    tokens = iter(argv)
    for token in tokens:
        if token.startswith("--") and "." in token and "=" not in token:
            overrides.append(token)
            overrides.append(next(tokens, ""))
        elif token.startswith("--") and "." in token.split("=", 1)[0]:
            overrides.extend(token.split("=", 1))
        else:
            rest.append(token)
    return rest, overrides


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line; returns the process exit code."""
    rest, overrides = split_overrides(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(rest)
        config = load_config(args.config, overrides)
        setup_logging(config)
        _LOGGER.debug("\n".join(header_lines(config)))
        return COMMANDS[args.command](config, args)
    except HyperScoreError as ex:
        _LOGGER.error("%s", ex)
        return ex.exit_code
    except OSError as ex:
        _LOGGER.error("%s", ex)
        return EXIT_CONFIG
