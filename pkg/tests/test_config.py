"""Configuration tests."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import pytest

from hyperscore.config import HANDLER_NAME, apply_overrides, load_config, setup_logging
from hyperscore.exceptions import ConfigurationError
from hyperscore.model import ModelLayout
from hyperscore.training import TrainConfig

SAMPLE_CONFIG = Path(__file__).parent.parent / "config" / "hyperscore.json"


def test_defaults() -> None:
    """Test an empty configuration is filled with the full-scale defaults."""
    config = load_config()
    assert config["seed"] == 0
    assert config["dims"]["feature_dim"] == 512
    assert config["dims"]["dimensions"] == ["alignment", "geometry", "texture", "overall"]
    assert config["train"]["batch_size"] == 8
    assert config["train"]["epochs"] == 30
    assert config["train"]["lr_main"] == 2e-4
    assert config["train"]["folds"] == 5
    assert config["screening"]["trap_low"] == 3
    assert config["modes"]["gradcheck_precision"] == "f64"
    assert config["model"]["hyper_heads"] is True
    assert config["logger"] == {"default": "info", "logs": {}}

    train = TrainConfig.from_config(config)
    assert train.lr_encoder == 2e-6
    assert train.lam == 1.0
    assert ModelLayout.from_config(config) == ModelLayout()


def test_overrides() -> None:
    """Test dotted command-line overrides."""
    config = load_config(
        overrides=[
            "--train.epochs",
            "3",
            "--seed",
            "7",
            "--model.aggregation",
            "add",
            "--dims.dimensions",
            '["geometry", "texture"]',
            "--paths.output-dir",
            "runs/a",
        ]
    )
    assert config["train"]["epochs"] == 3
    assert config["seed"] == 7
    assert config["model"]["aggregation"] == "add"
    assert config["paths"]["output_dir"] == "runs/a"
    assert ModelLayout.from_config(config).num_conditions == 2

    assert apply_overrides({"train": {"epochs": 1}}, []) == {"train": {"epochs": 1}}
    with pytest.raises(ConfigurationError):
        apply_overrides({}, ["--seed"])
    with pytest.raises(ConfigurationError):
        apply_overrides({}, ["seed", "1"])
    with pytest.raises(ConfigurationError):
        apply_overrides({"seed": 1}, ["--seed.value", "1"])


@pytest.mark.parametrize(
    "data",
    [
        {"train": {"folds": 1}},
        {"train": {"batch_size": 0}},
        {"model": {"aggregation": "mean"}},
        {"modes": {"gradcheck_precision": "f16"}},
        {"seed": -1},
        {"colour": True},
        {"logger": {"default": "loud"}},
    ],
)
def test_invalid(tmp_path, data) -> None:
    """Test schema violations raise configuration errors."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_files(tmp_path) -> None:
    """Test reading configuration files."""
    config = load_config(SAMPLE_CONFIG)
    assert config["dims"]["feature_dim"] == 16
    assert config["logger"]["logs"] == {"hyperscore": "debug"}

    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[]")
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "list.json")


def test_setup_logging() -> None:
    """Test the console handler is installed once with the configured levels."""
    config = load_config(overrides=["--logger.logs", '{"hyperscore.training": "warning"}'])
    setup_logging(config)
    setup_logging(config)
    root = logging.getLogger()
    assert [h.get_name() for h in root.handlers].count(HANDLER_NAME) == 1
    assert root.level == logging.INFO
    assert logging.getLogger("hyperscore.training").level == logging.WARNING
    for handler in list(root.handlers):
        if handler.get_name() == HANDLER_NAME:
            root.removeHandler(handler)
    logging.getLogger("hyperscore.training").setLevel(logging.NOTSET)
