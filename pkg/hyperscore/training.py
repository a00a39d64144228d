"""Losses, backpropagation, Adam and the prompt-disjoint cross-validation harness."""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
import json
import logging
import os
from pathlib import Path
from struct import calcsize, pack, unpack_from
from typing import Any, NamedTuple, TypeVar
import warnings

import numpy as np

from .conditions import ToyTextEncoder, condition_backward, condition_forward
from .const import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    CHECKPOINT_MAGIC,
    CONF_BATCH_SIZE,
    CONF_EPOCHS,
    CONF_FOLDS,
    CONF_LAMBDA,
    CONF_LR_DECAY,
    CONF_LR_DECAY_EVERY,
    CONF_LR_ENCODER,
    CONF_LR_MAIN,
    CONF_MARGIN,
    CONF_MODES,
    CONF_PARALLEL,
    CONF_SEED,
    CONF_TRAIN,
    CONF_WEIGHT_DECAY,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_FOLDS,
    DEFAULT_LAMBDA,
    DEFAULT_LR_DECAY,
    DEFAULT_LR_DECAY_EVERY,
    DEFAULT_LR_ENCODER,
    DEFAULT_LR_MAIN,
    DEFAULT_MARGIN,
    DEFAULT_WEIGHT_DECAY,
    ENV_THREADS,
    GROUP_ENCODER,
    GROUP_FUSION,
    GROUP_HYPERNET,
    GROUP_PROMPTS,
    PARAM_GROUPS,
)
from .exceptions import (
    ArgumentError,
    ConfigurationError,
    DegenerateFeatureError,
    FeatureDataError,
    FeatureFormatError,
    NumericalError,
    UndefinedCorrelationError,
)
from .features import FeatureBundle
from .fusion import NORM_FLOOR, SampleContext, fusion_backward, fusion_forward, sample_context
from .helpers import config_hash, philox, require_positive
from .hypernet import (
    MappingHeadParams,
    head_backward,
    head_forward,
)
from .model import (
    HyperScoreModel,
    ModelLayout,
    ModelParams,
    build_model,
    check_bundle,
    mapping_heads,
    mapping_heads_backward,
    meta_tokens_for,
)
from .stats import krcc, plcc, srcc

_LOGGER = logging.getLogger(__name__)

CHECKPOINT_HEADER_FORMAT = "<I"
F32 = np.dtype("<f4")
METRICS = ("plcc", "srcc", "krcc", "mse")

_T = TypeVar("_T")
_R = TypeVar("_R")


@dataclass
class TrainConfig:
    """Optimization settings of one run."""

    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    lr_main: float = DEFAULT_LR_MAIN
    lr_encoder: float = DEFAULT_LR_ENCODER
    lr_decay: float = DEFAULT_LR_DECAY
    lr_decay_every: int = DEFAULT_LR_DECAY_EVERY
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    lam: float = DEFAULT_LAMBDA
    margin: float = DEFAULT_MARGIN
    folds: int = DEFAULT_FOLDS
    seed: int = 0
    parallel: bool = False
    disentangle_only: bool = False

    def __post_init__(self) -> None:
        """Validate ranges."""
        require_positive(batch_size=self.batch_size, lr_decay_every=self.lr_decay_every)
        if self.epochs < 0:
            raise ArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr_main < 0 or self.lr_encoder < 0:
            raise ArgumentError("learning rates must not be negative")
        if self.weight_decay < 0 or self.lam < 0:
            raise ArgumentError("weight decay and lambda must not be negative")

    @classmethod
    def from_config(cls, config: dict[str, Any]) -> TrainConfig:
        """Settings from a validated run configuration."""
        train = config[CONF_TRAIN]
        return cls(
            batch_size=train[CONF_BATCH_SIZE],
            epochs=train[CONF_EPOCHS],
            lr_main=train[CONF_LR_MAIN],
            lr_encoder=train[CONF_LR_ENCODER],
            lr_decay=train[CONF_LR_DECAY],
            lr_decay_every=train[CONF_LR_DECAY_EVERY],
            weight_decay=train[CONF_WEIGHT_DECAY],
            lam=train[CONF_LAMBDA],
            margin=train[CONF_MARGIN],
            folds=train[CONF_FOLDS],
            seed=config[CONF_SEED],
            parallel=config[CONF_MODES][CONF_PARALLEL],
        )

    def base_rate(self, group: str) -> float:
        """Undecayed learning rate of a parameter group."""
        return self.lr_encoder if group == GROUP_ENCODER else self.lr_main


class LossBreakdown(NamedTuple):
    """Regression, disentangling and total loss."""

    l_reg: float
    l_dis: float
    total: float


@dataclass
class LabeledSample:
    """A feature bundle with its K target scores."""

    bundle: FeatureBundle
    target: np.ndarray
    _contexts: dict[str, SampleContext] = field(default_factory=dict, repr=False)

    def context(self, dtype: np.dtype | type) -> SampleContext:
        """Parameter-independent fusion inputs, cached per precision."""
        key = np.dtype(dtype).str
        if key not in self._contexts:
            self._contexts[key] = sample_context(self.bundle, dtype)
        return self._contexts[key]

    @property
    def prompt_id(self) -> str:
        """Prompt the sample was generated from."""
        return self.bundle.prompt_id


def loss_regression(preds: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error over all B x K entries."""
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.shape != targets.shape:
        raise ArgumentError(f"preds {preds.shape} != targets {targets.shape}")
    if preds.size == 0:
        return 0.0
    return float(np.mean((preds - targets) ** 2))


def _disentangle(conditions: np.ndarray, margin: float) -> tuple[float, np.ndarray]:
    num = conditions.shape[0]
    if num < 2:
        warnings.warn("disentangling loss needs at least two conditions", RuntimeWarning, stacklevel=3)
        return 0.0, np.zeros_like(conditions)
    norms = np.linalg.norm(conditions, axis=1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise DegenerateFeatureError("condition feature is near zero")
    unit = conditions / norms
    cosines = unit @ unit.T
    upper = np.triu_indices(num, 1)
    pairs = cosines[upper]
    value = float(np.mean(np.maximum(margin, pairs)))
    # only pairs above the margin carry gradient
    coupling = np.zeros_like(cosines)
    coupling[upper] = (pairs > margin) / pairs.size
    coupling = coupling + coupling.T
    grad_unit = coupling @ unit
    radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
    return value, (grad_unit - unit * radial) / norms


def loss_disentangle(conditions: np.ndarray, margin: float = DEFAULT_MARGIN) -> float:
    """Mean over unordered pairs of max(margin, cos(f_c^i, f_c^j))."""
    value, _ = _disentangle(np.asarray(conditions, dtype=np.float64), margin)
    return value


def loss_disentangle_grad(
    conditions: np.ndarray, margin: float = DEFAULT_MARGIN
) -> tuple[float, np.ndarray]:
    """Disentangling loss and its gradient with respect to the conditions."""
    return _disentangle(conditions, margin)


def loss_total(l_reg: float, l_dis: float, lam: float = DEFAULT_LAMBDA) -> float:
    """L_reg + lambda * L_dis."""
    return l_reg + lam * l_dis


def _workers() -> int:
    value = os.environ.get(ENV_THREADS)
    if value:
        try:
            return max(int(value), 1)
        except ValueError:
            _LOGGER.warning("Ignoring non-integer %s=%s", ENV_THREADS, value)
    return os.cpu_count() or 1


def _map(func: Callable[[_T], _R], items: Iterable[_T], parallel: bool) -> list[_R]:
    items = list(items)
    workers = min(_workers(), len(items))
    if not parallel or workers < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _targets(samples: Sequence[LabeledSample], model: HyperScoreModel) -> np.ndarray:
    num = model.layout.num_conditions
    for sample in samples:
        if sample.target.shape != (num,):
            raise ArgumentError(
                f"{sample.bundle.sample_id}: target shape {sample.target.shape} != ({num},)"
            )
    return np.stack([sample.target for sample in samples]).astype(model.dtype)


def _sample_forward(
    model: HyperScoreModel, conditions: np.ndarray, head: MappingHeadParams
) -> Callable[[LabeledSample], tuple]:
    layout = model.layout
    mlp = model.mlp

    def run(sample: LabeledSample) -> tuple:
        check_bundle(sample.bundle, layout)
        context = sample.context(model.dtype)
        features, fusion_cache = fusion_forward(
            context, conditions, mlp, layout.aggregation, layout.conditional_fusion
        )
        scores, head_cache = head_forward(features, head)
        return context, fusion_cache, head_cache, scores

    return run


def compute_loss(
    samples: Sequence[LabeledSample], model: HyperScoreModel, config: TrainConfig
) -> LossBreakdown:
    """Loss of a batch without gradients."""
    conditions, _ = condition_forward(model.prompts, model.encoder)
    l_dis = loss_disentangle(conditions, config.margin)
    if config.disentangle_only:
        return LossBreakdown(0.0, l_dis, l_dis)
    head, _ = mapping_heads(conditions, model)
    results = _map(_sample_forward(model, conditions, head), samples, config.parallel)
    preds = np.stack([result[3] for result in results]) if results else np.zeros((0,))
    l_reg = loss_regression(preds, _targets(samples, model) if samples else preds)
    return LossBreakdown(l_reg, l_dis, loss_total(l_reg, l_dis, config.lam))


def backward(
    samples: Sequence[LabeledSample], model: HyperScoreModel, config: TrainConfig
) -> tuple[LossBreakdown, ModelParams]:
    """Loss of a batch and its analytic gradient for every trainable tensor."""
    prompts = model.prompts
    mlp = model.mlp
    layout = model.layout
    conditions, encoder_cache = condition_forward(prompts, model.encoder)
    l_dis, grad_conditions = _disentangle(conditions, config.margin)
    grad_conditions = grad_conditions * (1.0 if config.disentangle_only else config.lam)
    grads = model.params.zeros_like()
    l_reg = 0.0
    if not config.disentangle_only and samples:
        head, hyper_cache = mapping_heads(conditions, model)
        results = _map(_sample_forward(model, conditions, head), samples, config.parallel)
        preds = np.stack([result[3] for result in results])
        targets = _targets(samples, model)
        l_reg = loss_regression(preds, targets)
        grad_preds = 2.0 * (preds - targets) / preds.size

        def sample_backward(item: tuple[tuple, np.ndarray]) -> tuple:
            (context, fusion_cache, head_cache, _), grad_scores = item
            grad_features, grad_head = head_backward(head_cache, grad_scores, head)
            grad_cond, grad_mlp = fusion_backward(context, fusion_cache, grad_features, mlp)
            return grad_cond, grad_mlp, grad_head

        parts = _map(sample_backward, zip(results, grad_preds), config.parallel)
        grad_head = MappingHeadParams(
            [np.zeros_like(w) for w in head.weights], [np.zeros_like(b) for b in head.biases]
        )
        # reduce in sample order
        for grad_cond, grad_mlp, sample_head in parts:
            grad_conditions = grad_conditions + grad_cond
            for name, value in grad_mlp.items():
                grads.groups[GROUP_FUSION][name] += value
            for layer in range(len(grad_head.weights)):
                grad_head.weights[layer] += sample_head.weights[layer]
                grad_head.biases[layer] += sample_head.biases[layer]
        grad_from_head, hyper_grads = mapping_heads_backward(hyper_cache, grad_head, model)
        grad_conditions = grad_conditions + grad_from_head
        grads.groups[GROUP_HYPERNET].update(hyper_grads)
    grads.groups[GROUP_PROMPTS]["learnable_tokens"] = condition_backward(
        encoder_cache, grad_conditions, prompts, model.encoder
    ).astype(model.dtype)
    for group, name, tensor in grads.named():
        if not np.isfinite(tensor).all():
            raise NumericalError(f"non-finite gradient in {group}.{name}")
    scale = 1.0 if config.disentangle_only else config.lam
    losses = LossBreakdown(l_reg, l_dis, loss_total(l_reg, l_dis, scale))
    if not np.isfinite(losses.total):
        raise NumericalError("non-finite loss")
    return losses, grads


@dataclass
class AdamState:
    """First and second moments plus the step counter."""

    first: ModelParams
    second: ModelParams
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    weight_decay: float = DEFAULT_WEIGHT_DECAY

    @classmethod
    def zeros(cls, params: ModelParams, weight_decay: float = DEFAULT_WEIGHT_DECAY) -> AdamState:
        """Fresh state shaped like params."""
        return cls(params.zeros_like(), params.zeros_like(), weight_decay=weight_decay)


def adam_step(
    params: ModelParams, grads: ModelParams, state: AdamState, lrs: dict[str, float]
) -> tuple[ModelParams, AdamState]:
    """One Adam update with L2-coupled weight decay.

    Only the groups named in lrs move; every other group and its moments are
    left untouched.
    """
    for group, rate in lrs.items():
        if group not in PARAM_GROUPS:
            raise ArgumentError(f"unknown parameter group {group}")
        if not rate > 0:
            raise ArgumentError(f"learning rate of {group} must be > 0, got {rate}")
    step = state.step + 1
    new_params = params.copy()
    first = state.first.copy()
    second = state.second.copy()
    correction1 = 1.0 - state.beta1**step
    correction2 = 1.0 - state.beta2**step
    for group, rate in lrs.items():
        for name, value in params.groups[group].items():
            grad = grads.groups[group][name]
            if grad.shape != value.shape:
                raise ArgumentError(f"{group}.{name}: gradient {grad.shape} != {value.shape}")
            grad = grad + state.weight_decay * value
            m = state.beta1 * state.first.groups[group][name] + (1.0 - state.beta1) * grad
            v = state.beta2 * state.second.groups[group][name] + (1.0 - state.beta2) * grad * grad
            first.groups[group][name] = m.astype(value.dtype)
            second.groups[group][name] = v.astype(value.dtype)
            update = rate * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
            new_params.groups[group][name] = (value - update).astype(value.dtype)
    return new_params, AdamState(
        first, second, step, state.beta1, state.beta2, state.eps, state.weight_decay
    )


def learning_rate(
    base: float,
    epoch: int,
    decay: float = DEFAULT_LR_DECAY,
    every: int = DEFAULT_LR_DECAY_EVERY,
) -> float:
    """Step decay: base * decay^(epoch // every)."""
    require_positive(every=every)
    return base * decay ** (epoch // every)


def crossval_split(
    prompt_ids: Sequence[str], k: int = DEFAULT_FOLDS, seed: int = 0
) -> list[tuple[list[str], list[str]]]:
    """Prompt-disjoint folds; every prompt is tested exactly once.

    Prompts are sorted, shuffled with the seed and cut into k nearly equal
    test folds; the first (|prompts| mod k) folds take one extra prompt.
    """
    prompts = sorted(set(prompt_ids))
    if k < 2:
        raise ArgumentError(f"cross-validation needs k >= 2, got {k}")
    if k > len(prompts):
        raise ArgumentError(f"k={k} exceeds the {len(prompts)} distinct prompts")
    order = np.random.default_rng(seed).permutation(len(prompts))
    folds = []
    for indices in np.array_split(order, k):
        test = {prompts[i] for i in indices}
        folds.append(
            ([p for p in prompts if p not in test], [p for p in prompts if p in test])
        )
    return folds


def get_cv_seed(base_seed: int, fold: int) -> int:
    """Seed of one fold's batch shuffling."""
    return base_seed + fold


class TrainingLog:
    """JSON-lines training log: one header record, then one record per epoch."""

    def __init__(self, path: str | Path | None = None, config: dict[str, Any] | None = None) -> None:
        """Open the log and write its header."""
        self.path = Path(path) if path else None
        self.records: list[dict[str, Any]] = []
        self.header = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "config_hash": config_hash(config) if config is not None else None,
            "seed": config.get(CONF_SEED) if config is not None else None,
        }
        if self.path:
            self.path.write_text(json.dumps(self.header) + "\n")

    def append(self, record: dict[str, Any]) -> None:
        """Add one record."""
        self.records.append(record)
        if self.path:
            with self.path.open("a") as handle:
                handle.write(json.dumps(record) + "\n")


@dataclass
class TrainingHistory:
    """Per-epoch losses of one training run."""

    initial: LossBreakdown
    epochs: list[LossBreakdown] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best(self) -> LossBreakdown:
        """Loss of the retained snapshot."""
        return self.epochs[self.best_epoch] if self.epochs else self.initial


def _batches(count: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(count)
    return [order[start : start + batch_size] for start in range(0, count, batch_size)]


def train_model(
    samples: Sequence[LabeledSample],
    model: HyperScoreModel,
    config: TrainConfig,
    fold: int = 0,
    log: TrainingLog | None = None,
) -> tuple[HyperScoreModel, TrainingHistory]:
    """Train one fold; returns the epoch snapshot with the minimal training loss.

    An epoch's loss is the full training-set loss after that epoch. Groups
    whose current learning rate is zero (or that hold no tensors) are frozen.
    """
    if not samples and not config.disentangle_only:
        raise ConfigurationError("empty training set")
    history = TrainingHistory(compute_loss(samples, model, config))
    _LOGGER.info("Fold %s: initial loss %.6f", fold, history.initial.total)
    best = model
    state = AdamState.zeros(model.params, config.weight_decay)
    rng = philox(get_cv_seed(config.seed, fold), 0xBA7C)
    for epoch in range(config.epochs):
        rates = {
            group: learning_rate(
                config.base_rate(group), epoch, config.lr_decay, config.lr_decay_every
            )
            for group in PARAM_GROUPS
        }
        active = {
            group: rate
            for group, rate in rates.items()
            if rate > 0 and model.params.groups.get(group)
        }
        for batch in _batches(len(samples), config.batch_size, rng):
            _, grads = backward([samples[i] for i in batch], model, config)
            if active:
                params, state = adam_step(model.params, grads, state, active)
                model = model.with_params(params)
        losses = compute_loss(samples, model, config)
        history.epochs.append(losses)
        if history.best_epoch < 0 or losses.total < history.best.total:
            history.best_epoch = epoch
            best = model.with_params(model.params.copy())
        _LOGGER.debug(
            "Fold %s epoch %s: l_reg %.6f, l_dis %.6f", fold, epoch, losses.l_reg, losses.l_dis
        )
        if log is not None:
            log.append(
                {
                    "fold": fold,
                    "epoch": epoch,
                    "l_reg": losses.l_reg,
                    "l_dis": losses.l_dis,
                    "loss": losses.total,
                    "lr": rates,
                }
            )
    _LOGGER.info(
        "Fold %s: best epoch %s, loss %.6f", fold, history.best_epoch, history.best.total
    )
    return best, history


def predict_samples(
    model: HyperScoreModel, samples: Sequence[LabeledSample | FeatureBundle], parallel: bool = False
) -> np.ndarray:
    """N x K raw scores."""
    conditions, _ = condition_forward(model.prompts, model.encoder)
    head, _ = mapping_heads(conditions, model)
    wrapped = [
        sample if isinstance(sample, LabeledSample) else LabeledSample(sample, np.zeros(0))
        for sample in samples
    ]
    results = _map(_sample_forward(model, conditions, head), wrapped, parallel)
    if not results:
        return np.zeros((0, model.layout.num_conditions))
    return np.stack([result[3] for result in results])


def evaluate(
    model: HyperScoreModel, samples: Sequence[LabeledSample], parallel: bool = False
) -> dict[str, dict[str, float]]:
    """PLCC/SRCC/KRCC and MSE per dimension; undefined correlations are NaN."""
    preds = predict_samples(model, samples, parallel).astype(np.float64)
    targets = np.stack([sample.target for sample in samples]).astype(np.float64)
    metrics: dict[str, dict[str, float]] = {}
    for index, name in enumerate(model.layout.dimension_names):
        pred, mos = preds[:, index], targets[:, index]
        row = {"mse": float(np.mean((pred - mos) ** 2))}
        for metric, func in (("plcc", plcc), ("srcc", srcc), ("krcc", krcc)):
            try:
                row[metric] = func(pred, mos)
            except (UndefinedCorrelationError, ArgumentError) as ex:
                _LOGGER.warning("%s %s undefined: %s", name, metric, ex)
                row[metric] = float("nan")
        metrics[name] = row
    return metrics


@dataclass
class FoldResult:
    """Snapshot, history and test metrics of one fold."""

    fold: int
    train_prompts: list[str]
    test_prompts: list[str]
    model: HyperScoreModel
    history: TrainingHistory
    metrics: dict[str, dict[str, float]]


@dataclass
class FitResult:
    """Every fold plus the fold-averaged metrics."""

    folds: list[FoldResult]
    summary: dict[str, dict[str, float]]

    def report_rows(self) -> list[dict[str, Any]]:
        """Flat rows (fold, dimension, metrics); fold "mean" holds the averages."""
        rows = [
            {"fold": str(result.fold), "dimension": name, **values}
            for result in self.folds
            for name, values in result.metrics.items()
        ]
        rows += [{"fold": "mean", "dimension": name, **values} for name, values in self.summary.items()]
        return rows


def _fold_mean(values: Sequence[float]) -> float:
    finite = [value for value in values if not np.isnan(value)]
    return float(np.mean(finite)) if finite else float("nan")


def fit(
    samples: Sequence[LabeledSample],
    layout: ModelLayout,
    config: TrainConfig,
    log: TrainingLog | None = None,
    dtype: np.dtype | type = np.float32,
) -> FitResult:
    """K-fold prompt-disjoint cross-validation with minimal-training-loss snapshots."""
    if not samples:
        raise ConfigurationError("empty dataset")
    folds = crossval_split([sample.prompt_id for sample in samples], config.folds, config.seed)
    results = []
    for fold, (train_prompts, test_prompts) in enumerate(folds):
        train_set = set(train_prompts)
        train = [sample for sample in samples if sample.prompt_id in train_set]
        test = [sample for sample in samples if sample.prompt_id not in train_set]
        if not train or not test:
            raise ConfigurationError(f"fold {fold} has an empty train or test set")
        _LOGGER.info(
            "Fold %s: %s train / %s test prompts", fold, len(train_prompts), len(test_prompts)
        )
        model = build_model(layout, config.seed, dtype)
        best, history = train_model(train, model, config, fold, log)
        results.append(
            FoldResult(
                fold, train_prompts, test_prompts, best, history, evaluate(best, test, config.parallel)
            )
        )
    summary = {
        name: {
            metric: _fold_mean([result.metrics[name][metric] for result in results])
            for metric in METRICS
        }
        for name in layout.dimension_names
    }
    return FitResult(results, summary)


class Checkpoint(NamedTuple):
    """A loaded model with the configuration and extras stored beside it."""

    model: HyperScoreModel
    config: dict[str, Any] | None
    extra: dict[str, Any] | None


def save_checkpoint(
    model: HyperScoreModel,
    path: str | Path,
    config: dict[str, Any] | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    """Write HSC1: magic, u32 header length, JSON header, then f32 tensors."""
    index = []
    offset = 0
    blocks = []
    for group, name, tensor in model.params.named():
        data = np.ascontiguousarray(tensor, dtype=F32).tobytes()
        index.append({"group": group, "name": name, "shape": list(tensor.shape), "offset": offset})
        offset += len(data)
        blocks.append(data)
    header = json.dumps(
        {"layout": model.layout.to_dict(), "config": config, "extra": extra, "tensors": index},
        sort_keys=True,
    ).encode()
    Path(path).write_bytes(
        CHECKPOINT_MAGIC + pack(CHECKPOINT_HEADER_FORMAT, len(header)) + header + b"".join(blocks)
    )


def load_checkpoint(
    path: str | Path, dtype: np.dtype | type = np.float32
) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as ex:
        raise FeatureDataError(f"{path}: checkpoint not found") from ex
    start = len(CHECKPOINT_MAGIC) + calcsize(CHECKPOINT_HEADER_FORMAT)
    if len(data) < start or data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FeatureFormatError(f"{path}: not a checkpoint")
    (length,) = unpack_from(CHECKPOINT_HEADER_FORMAT, data, len(CHECKPOINT_MAGIC))
    try:
        header = json.loads(data[start : start + length])
        layout = ModelLayout.from_dict(header["layout"])
        tensors = header["tensors"]
    except (KeyError, TypeError, ValueError) as ex:
        raise FeatureFormatError(f"{path}: malformed checkpoint header ({ex})") from ex
    body = start + length
    groups: dict[str, dict[str, np.ndarray]] = {group: {} for group in PARAM_GROUPS}
    for entry in tensors:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if body + entry["offset"] + count * F32.itemsize > len(data):
            raise FeatureFormatError(f"{path}: truncated tensor {entry['group']}.{entry['name']}")
        values = np.frombuffer(data, F32, count, body + entry["offset"])
        groups[entry["group"]][entry["name"]] = values.reshape(entry["shape"]).astype(dtype)
    encoder = ToyTextEncoder(
        layout.encoder_seed, layout.dim, layout.sequence_length, layout.encoder_rank
    )
    model = HyperScoreModel(layout, ModelParams(groups), meta_tokens_for(layout), encoder)
    _LOGGER.debug("Loaded checkpoint %s with %s values", path, model.params.size)
    return Checkpoint(model.astype(dtype), header.get("config"), header.get("extra"))
