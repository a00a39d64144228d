"""Run configuration: schema, overrides and logging setup."""

from __future__ import annotations

import copy
import json
import logging
from pathlib import Path
from typing import Any

import colorlog
import voluptuous as vol

from .const import (
    AGGREGATION_MULTIPLY,
    AGGREGATIONS,
    CONF_AGGREGATION,
    CONF_ANNOTATIONS,
    CONF_BATCH_SIZE,
    CONF_CONDITIONAL_FUSION,
    CONF_DEFAULT,
    CONF_DIMENSIONS,
    CONF_DIMS,
    CONF_DUPLICATE_PAIRS,
    CONF_ENCODER_RANK,
    CONF_EPOCHS,
    CONF_FEATURE_DIM,
    CONF_FEATURE_DIR,
    CONF_FOLDS,
    CONF_FUSION_HIDDEN,
    CONF_HEAD_DIMS,
    CONF_HYPER_CHANNELS,
    CONF_HYPER_GRID,
    CONF_HYPER_HEADS,
    CONF_LABEL_MEAN,
    CONF_LABEL_STD,
    CONF_LABELS,
    CONF_LAMBDA,
    CONF_LOGGER,
    CONF_LOGISTIC,
    CONF_LOGS,
    CONF_LOW_QUALITY_IDS,
    CONF_LR_DECAY,
    CONF_LR_DECAY_EVERY,
    CONF_LR_ENCODER,
    CONF_LR_MAIN,
    CONF_MANIFEST,
    CONF_MARGIN,
    CONF_MODEL,
    CONF_MODES,
    CONF_NUM_METHODS,
    CONF_NUM_PROMPTS,
    CONF_OUTPUT_DIR,
    CONF_PARALLEL,
    CONF_PATCHES,
    CONF_PATHS,
    CONF_PRECISION,
    CONF_PREDICTIONS,
    CONF_PROMPT_TOKENS,
    CONF_QUALITY_DIM,
    CONF_SCREENING,
    CONF_SEED,
    CONF_SYNTH,
    CONF_TEXT_TOKENS,
    CONF_TRAIN,
    CONF_TRAP_DUPLICATE,
    CONF_TRAP_LOW,
    CONF_USE_META,
    CONF_VIEWS,
    CONF_WEIGHT_DECAY,
    DEFAULT_BATCH_SIZE,
    DEFAULT_DIMENSIONS,
    DEFAULT_ENCODER_RANK,
    DEFAULT_EPOCHS,
    DEFAULT_FEATURE_DIM,
    DEFAULT_FOLDS,
    DEFAULT_HYPER_CHANNELS,
    DEFAULT_HYPER_GRID,
    DEFAULT_LAMBDA,
    DEFAULT_LR_DECAY,
    DEFAULT_LR_DECAY_EVERY,
    DEFAULT_LR_ENCODER,
    DEFAULT_LR_MAIN,
    DEFAULT_MARGIN,
    DEFAULT_PATCHES,
    DEFAULT_PROMPT_TOKENS,
    DEFAULT_QUALITY_DIM,
    DEFAULT_TEXT_TOKENS,
    DEFAULT_VIEWS,
    DEFAULT_WEIGHT_DECAY,
    TRAP_DUPLICATE_THRESHOLD,
    TRAP_LOW_THRESHOLD,
)
from .exceptions import ConfigurationError

_LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "%(log_color)s%(asctime)s %(levelname)-8s%(reset)s %(name)s: %(message)s"
HANDLER_NAME = "hyperscore-console"
LOG_LEVELS = ["debug", "info", "warning", "error", "critical"]

POSITIVE_INT = vol.All(int, vol.Range(min=1))
NON_NEGATIVE = vol.All(vol.Coerce(float), vol.Range(min=0))
OPTIONAL_PATH = vol.Any(None, str)

PATHS_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_MANIFEST, default=None): OPTIONAL_PATH,
        vol.Required(CONF_FEATURE_DIR, default=None): OPTIONAL_PATH,
        vol.Required(CONF_ANNOTATIONS, default=None): OPTIONAL_PATH,
        vol.Required(CONF_LABELS, default=None): OPTIONAL_PATH,
        vol.Required(CONF_PREDICTIONS, default=None): OPTIONAL_PATH,
        vol.Required(CONF_OUTPUT_DIR, default="output"): str,
    }
)

DIMS_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_VIEWS, default=DEFAULT_VIEWS): POSITIVE_INT,
        vol.Required(CONF_PATCHES, default=DEFAULT_PATCHES): POSITIVE_INT,
        vol.Required(CONF_TEXT_TOKENS, default=DEFAULT_TEXT_TOKENS): POSITIVE_INT,
        vol.Required(CONF_FEATURE_DIM, default=DEFAULT_FEATURE_DIM): POSITIVE_INT,
        vol.Required(CONF_QUALITY_DIM, default=DEFAULT_QUALITY_DIM): POSITIVE_INT,
        vol.Required(CONF_DIMENSIONS, default=list(DEFAULT_DIMENSIONS)): vol.All(
            [str], vol.Length(min=1)
        ),
        vol.Required(CONF_PROMPT_TOKENS, default=DEFAULT_PROMPT_TOKENS): POSITIVE_INT,
    }
)

TRAIN_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_BATCH_SIZE, default=DEFAULT_BATCH_SIZE): POSITIVE_INT,
        vol.Required(CONF_EPOCHS, default=DEFAULT_EPOCHS): vol.All(int, vol.Range(min=0)),
        vol.Required(CONF_LR_MAIN, default=DEFAULT_LR_MAIN): NON_NEGATIVE,
        vol.Required(CONF_LR_ENCODER, default=DEFAULT_LR_ENCODER): NON_NEGATIVE,
        vol.Required(CONF_LR_DECAY, default=DEFAULT_LR_DECAY): NON_NEGATIVE,
        vol.Required(CONF_LR_DECAY_EVERY, default=DEFAULT_LR_DECAY_EVERY): POSITIVE_INT,
        vol.Required(CONF_WEIGHT_DECAY, default=DEFAULT_WEIGHT_DECAY): NON_NEGATIVE,
        vol.Required(CONF_LAMBDA, default=DEFAULT_LAMBDA): NON_NEGATIVE,
        vol.Required(CONF_MARGIN, default=DEFAULT_MARGIN): vol.All(
            vol.Coerce(float), vol.Range(min=-1, max=1)
        ),
        vol.Required(CONF_FOLDS, default=DEFAULT_FOLDS): vol.All(int, vol.Range(min=2)),
    }
)

MODEL_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_FUSION_HIDDEN, default=None): vol.Any(None, POSITIVE_INT),
        vol.Required(CONF_HEAD_DIMS, default=None): vol.Any(
            None, vol.All([POSITIVE_INT], vol.Length(min=2))
        ),
        vol.Required(CONF_HYPER_CHANNELS, default=DEFAULT_HYPER_CHANNELS): POSITIVE_INT,
        vol.Required(CONF_HYPER_GRID, default=DEFAULT_HYPER_GRID): POSITIVE_INT,
        vol.Required(CONF_ENCODER_RANK, default=DEFAULT_ENCODER_RANK): POSITIVE_INT,
        vol.Required(CONF_AGGREGATION, default=AGGREGATION_MULTIPLY): vol.In(AGGREGATIONS),
        vol.Required(CONF_USE_META, default=True): bool,
        vol.Required(CONF_CONDITIONAL_FUSION, default=True): bool,
        vol.Required(CONF_HYPER_HEADS, default=True): bool,
    }
)

SYNTH_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_NUM_PROMPTS, default=4): POSITIVE_INT,
        vol.Required(CONF_NUM_METHODS, default=8): POSITIVE_INT,
        vol.Required(CONF_LABEL_MEAN, default=5.0): vol.Coerce(float),
        vol.Required(CONF_LABEL_STD, default=1.0): NON_NEGATIVE,
    }
)

SCREENING_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_TRAP_LOW, default=TRAP_LOW_THRESHOLD): NON_NEGATIVE,
        vol.Required(CONF_TRAP_DUPLICATE, default=TRAP_DUPLICATE_THRESHOLD): NON_NEGATIVE,
        vol.Required(CONF_LOW_QUALITY_IDS, default=[]): [str],
        vol.Required(CONF_DUPLICATE_PAIRS, default=[]): [vol.ExactSequence([str, str])],
    }
)

MODES_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_PRECISION, default="f64"): vol.In(["f64", "f32"]),
        vol.Required(CONF_LOGISTIC, default=False): bool,
        vol.Required(CONF_PARALLEL, default=False): bool,
    }
)

LOGGER_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_DEFAULT, default="info"): vol.All(vol.Lower, vol.In(LOG_LEVELS)),
        vol.Required(CONF_LOGS, default={}): {str: vol.All(vol.Lower, vol.In(LOG_LEVELS))},
    }
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_PATHS, default={}): PATHS_SCHEMA,
        vol.Required(CONF_DIMS, default={}): DIMS_SCHEMA,
        vol.Required(CONF_TRAIN, default={}): TRAIN_SCHEMA,
        vol.Required(CONF_MODEL, default={}): MODEL_SCHEMA,
        vol.Required(CONF_SYNTH, default={}): SYNTH_SCHEMA,
        vol.Required(CONF_SCREENING, default={}): SCREENING_SCHEMA,
        vol.Required(CONF_MODES, default={}): MODES_SCHEMA,
        vol.Required(CONF_LOGGER, default={}): LOGGER_SCHEMA,
        vol.Required(CONF_SEED, default=0): vol.All(int, vol.Range(min=0)),
    }
)


def validate_config(data: dict[str, Any]) -> dict[str, Any]:
    """Validate a configuration document and fill in defaults."""
    try:
        config = CONFIG_SCHEMA(copy.deepcopy(data))
    except vol.Invalid as ex:
        raise ConfigurationError(f"invalid configuration: {ex}") from ex
    config[CONF_SCREENING][CONF_DUPLICATE_PAIRS] = [
        list(pair) for pair in config[CONF_SCREENING][CONF_DUPLICATE_PAIRS]
    ]
    return config


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply `--a.b value` pairs to a configuration document."""
    if len(overrides) % 2:
        raise ConfigurationError(f"override {overrides[-1]} has no value")
    data = copy.deepcopy(data)
    for flag, text in zip(overrides[::2], overrides[1::2]):
        if not flag.startswith("--") or len(flag) < 3:
            raise ConfigurationError(f"expected --key value, got {flag}")
        *parents, leaf = flag[2:].replace("-", "_").split(".")
        node = data
        for key in parents:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"{flag}: {key} is not a section")
            node = child
        node[leaf] = _parse_value(text)
        _LOGGER.debug("Override %s = %r", flag[2:], node[leaf])
    return data


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict[str, Any]:
    """Read a JSON run configuration, apply overrides and validate."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as ex:
            raise ConfigurationError(f"configuration {path} not found") from ex
        except json.JSONDecodeError as ex:
            raise ConfigurationError(f"{path}: invalid JSON ({ex})") from ex
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
    return validate_config(apply_overrides(data, overrides or []))


def setup_logging(config: dict[str, Any]) -> None:
    """Install a colored console handler with the configured levels."""
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT))
    handler.set_name(HANDLER_NAME)
    root = logging.getLogger()
    for existing in list(root.handlers):
        if existing.get_name() == HANDLER_NAME:
            root.removeHandler(existing)
    root.addHandler(handler)
    levels = config.get(CONF_LOGGER, {})
    root.setLevel(levels.get(CONF_DEFAULT, "info").upper())
    for name, level in levels.get(CONF_LOGS, {}).items():
        logging.getLogger(name).setLevel(level.upper())
