from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from bninvert.adapters.checkpoint_bnck import save_checkpoint
from bninvert.adapters.dataset_synd import Split
from bninvert.core import ops
from bninvert.core.errors import InvalidArgumentError, InvalidModelError, ShapeError
from bninvert.core.interfaces import EvalFn
from bninvert.core.sampling import derive_seed, permutation
from bninvert.core.schemas import EpochRecord, Metrics, TrainConfig
from bninvert.core.tensor import Tensor
from bninvert.nn.layers import ForwardMode
from bninvert.nn.model import Model, model_forward
from bninvert.nn.optim import CosineSchedule, cosine_lr, sgd_step

logger = logging.getLogger(__name__)


def _check_split(model: Model, split: Split) -> None:
    if tuple(split.images.shape[1:]) != tuple(model.input_shape):
        raise ShapeError(f"Model expects images {tuple(model.input_shape)}, dataset has {tuple(split.images.shape[1:])}")
    if len(split) and int(split.labels.max()) >= model.class_count:
        raise ShapeError(f"Dataset label {int(split.labels.max())} exceeds model class count {model.class_count}")


def _batches(n: int, batch_size: int, order: np.ndarray) -> List[np.ndarray]:
    return [order[start : start + batch_size] for start in range(0, n, batch_size)]


def _train_epoch(model: Model, split: Split, config: TrainConfig, epoch: int, lr: float) -> float:
    n = len(split)
    order = permutation(n, derive_seed(config.seed, "shuffle", epoch))
    params = model.parameters()
    total, seen = 0.0, 0
    for index in _batches(n, config.batch_size, order):
        # train-mode BN needs at least two samples per batch
        if index.shape[0] < 2:
            continue
        model.zero_grad()
        x = Tensor(split.images[index], dtype=model.dtype)
        result = model_forward(model, x, ForwardMode.TRAIN)
        loss = ops.cross_entropy(result.logits, split.labels[index])
        loss.backward()
        sgd_step(params, lr)
        total += loss.item() * index.shape[0]
        seen += index.shape[0]
    return total / seen if seen else float("nan")


def train_model(
    model: Model,
    train_split: Split,
    config: TrainConfig,
    eval_fn: Optional[EvalFn] = None,
    progress: bool = False,
    desc: str = "train",
) -> Metrics:
    """SGD over ``train_split`` with a per-epoch cosine-annealed learning rate."""
    _check_split(model, train_split)
    if config.batch_size < 2:
        raise InvalidArgumentError(f"Train-mode BatchNorm needs batch_size >= 2, got {config.batch_size}")
    if len(train_split) < 2:
        raise InvalidArgumentError(f"Need at least 2 training samples, got {len(train_split)}")
    schedule = CosineSchedule(eta_max=config.lr, eta_min=config.lr_min, total_steps=config.epochs)
    metrics = Metrics()
    started = time.perf_counter()
    for epoch in tqdm(range(config.epochs), desc=desc, unit="epoch", disable=not progress):
        lr = cosine_lr(schedule, epoch)
        train_loss = _train_epoch(model, train_split, config, epoch, lr)
        test_acc = eval_fn(model) if eval_fn is not None else None
        metrics.epochs.append(EpochRecord(epoch=epoch + 1, train_loss=train_loss, test_acc=test_acc))
        logger.info(
            "%s epoch %d/%d lr=%.4g loss=%.4f%s",
            desc,
            epoch + 1,
            config.epochs,
            lr,
            train_loss,
            "" if test_acc is None else f" acc={test_acc:.4f}",
        )
    metrics.wall_clock_s = time.perf_counter() - started
    return metrics


def pretrain(
    model: Model,
    train_split: Split,
    config: TrainConfig,
    eval_fn: Optional[EvalFn] = None,
    checkpoint_path: Optional[Path] = None,
    progress: bool = False,
) -> Tuple[Model, Metrics]:
    """Train on original data so every BN layer accumulates running statistics."""
    if not model.bn_layers():
        raise InvalidModelError("pretrain needs a model with at least one BatchNorm layer")
    metrics = train_model(model, train_split, config, eval_fn=eval_fn, progress=progress, desc="pretrain")
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
        logger.info("Saved checkpoint to %s", checkpoint_path)
    return model, metrics


def train_from_scratch(
    fresh_model: Model,
    synthetic_split: Split,
    config: TrainConfig,
    eval_fn: Optional[EvalFn] = None,
    progress: bool = False,
) -> Tuple[Model, Metrics]:
    if len(synthetic_split) == 0:
        raise InvalidArgumentError("Cannot train on an empty synthetic dataset")
    metrics = train_model(fresh_model, synthetic_split, config, eval_fn=eval_fn, progress=progress, desc="train")
    return fresh_model, metrics


def _count_correct(model: Model, images: np.ndarray, labels: np.ndarray) -> int:
    logits = model_forward(model, Tensor(images, dtype=model.dtype), ForwardMode.EVAL).logits.data
    # np.argmax keeps the lowest index on ties
    return int(np.sum(np.argmax(logits, axis=1) == labels))


def evaluate(model: Model, split: Split, batch_size: int = 256, threads: int = 1) -> float:
    """Top-1 accuracy over ``split``; shards run in parallel when ``threads > 1``."""
    _check_split(model, split)
    n = len(split)
    if n == 0:
        raise InvalidArgumentError("Cannot evaluate on an empty split")
    shards = [slice(start, start + batch_size) for start in range(0, n, batch_size)]

    def run(shard: slice) -> int:
        return _count_correct(model, split.images[shard], split.labels[shard])

    with model.frozen():
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                correct = sum(executor.map(run, shards))
        else:
            correct = sum(run(shard) for shard in shards)
    return correct / n


def make_eval_fn(split: Split, batch_size: int = 256, threads: int = 1) -> EvalFn:
    def eval_fn(model: Model) -> float:
        return evaluate(model, split, batch_size=batch_size, threads=threads)

    return eval_fn
