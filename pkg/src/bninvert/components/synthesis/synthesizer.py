from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import reduce
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, DTypeLike
from tqdm import tqdm

from bninvert.adapters.checkpoint_bnck import model_checksum
from bninvert.adapters.dataset_synd import Dataset, Split
from bninvert.core import ops
from bninvert.core.errors import InvalidArgumentError, InvalidStateError
from bninvert.core.sampling import derive_seed, permutation, randn
from bninvert.core.schemas import DatasetManifest, LabelScheme, LossBreakdown, SynthesisConfig
from bninvert.core.tensor import Tensor
from bninvert.nn.layers import BN_EPS, ForwardMode, Moments
from bninvert.nn.model import BNStatsSnapshot, Model, model_forward
from bninvert.nn.optim import AdamState, adam_step

logger = logging.getLogger(__name__)


@dataclass
class SyntheticBatch:
    x_r: Tensor
    labels: np.ndarray
    batch_index: int


@dataclass
class BatchResult:
    batch: SyntheticBatch
    trace: List[LossBreakdown]


@dataclass
class SyntheticDataset:
    images: np.ndarray
    labels: np.ndarray
    class_count: int
    traces: List[List[LossBreakdown]] = field(default_factory=list)
    provenance: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def to_dataset(self, name: str = "synthetic") -> Dataset:
        """SYND view of the synthetic images; they already live in normalized input space."""
        channels = int(self.images.shape[1])
        manifest = DatasetManifest(
            name=name,
            class_count=self.class_count,
            image_shape=tuple(int(d) for d in self.images.shape[1:]),
            norm_mean=[0.0] * channels,
            norm_std=[1.0] * channels,
            metadata=dict(self.provenance),
        )
        split = Split(images=self.images.astype(np.float32), labels=self.labels.astype(np.int64))
        return Dataset(manifest=manifest, splits={"train": split})


def init_noise(
    config: SynthesisConfig,
    batch_index: int,
    image_shape: Sequence[int],
    dtype: Optional[DTypeLike] = None,
) -> Tensor:
    seed = derive_seed(config.seed, "noise", batch_index)
    return randn((config.batch_size, *image_shape), 0.0, 1.0, seed=seed, requires_grad=True, dtype=dtype)


def assign_labels(config: SynthesisConfig, batch_index: int, class_count: int) -> np.ndarray:
    if config.batch_size < class_count:
        raise InvalidArgumentError(
            f"batch_size ({config.batch_size}) must be at least the class count ({class_count})"
        )
    labels = np.arange(config.batch_size, dtype=np.int64) % class_count
    if config.label_scheme is LabelScheme.RANDOM_BALANCED:
        labels = labels[permutation(config.batch_size, derive_seed(config.seed, "labels", batch_index))]
    labels.setflags(write=False)
    return labels


def bn_matching_loss(
    bn_batch_stats: Sequence[Moments],
    snapshot: BNStatsSnapshot,
    logits: Tensor,
    labels: ArrayLike,
    match_std: bool = False,
    weights: Tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> Tuple[Tensor, LossBreakdown]:
    """Sum over BN layers of squared mean/variance gaps plus mean cross-entropy."""
    if len(bn_batch_stats) != len(snapshot):
        raise InvalidArgumentError(
            f"Got batch statistics for {len(bn_batch_stats)} BN layers, snapshot has {len(snapshot)}"
        )
    mean_terms: List[Tensor] = []
    var_terms: List[Tensor] = []
    for index, ((mu, var), ref) in enumerate(zip(bn_batch_stats, snapshot.layers)):
        if mu.shape != ref.mean.shape or var.shape != ref.var.shape:
            raise InvalidArgumentError(
                f"BN layer {index}: batch stats {mu.shape} do not match recorded stats {ref.mean.shape}"
            )
        mean_terms.append(ops.sum(ops.square(mu - Tensor(ref.mean, dtype=mu.dtype))))
        if match_std:
            gap = ops.sqrt(var + BN_EPS) - Tensor(np.sqrt(ref.var.astype(np.float64) + BN_EPS), dtype=var.dtype)
        else:
            gap = var - Tensor(ref.var, dtype=var.dtype)
        var_terms.append(ops.sum(ops.square(gap)))

    w_mean, w_var, w_ce = weights
    bn_mean = reduce(ops.add, mean_terms)
    bn_var = reduce(ops.add, var_terms)
    ce = ops.cross_entropy(logits, labels)
    total = bn_mean * w_mean + bn_var * w_var + ce * w_ce
    breakdown = LossBreakdown.from_terms(
        w_mean * bn_mean.item(),
        w_var * bn_var.item(),
        w_ce * ce.item(),
    )
    return total, breakdown


def _check_layout(model: Model, snapshot: BNStatsSnapshot) -> None:
    bns = model.bn_layers()
    if len(bns) != len(snapshot):
        raise InvalidArgumentError(f"Model has {len(bns)} BN layers, snapshot has {len(snapshot)}")
    for index, (bn, ref) in enumerate(zip(bns, snapshot.layers)):
        if ref.mean.shape != (bn.state.channels,):
            raise InvalidArgumentError(
                f"BN layer {index}: model has {bn.state.channels} channels, snapshot has {ref.mean.shape[0]}"
            )


def _optimize_batch(model: Model, snapshot: BNStatsSnapshot, config: SynthesisConfig, batch_index: int) -> BatchResult:
    x_r = init_noise(config, batch_index, model.input_shape, dtype=model.dtype)
    labels = assign_labels(config, batch_index, model.class_count)
    adam = AdamState.create([x_r], lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    weights = (config.bn_mean_weight, config.bn_var_weight, config.ce_weight)
    clip = (config.clip_min, config.clip_max) if config.clip_min is not None else None

    trace: List[LossBreakdown] = []
    for _step in range(config.steps):
        x_r.zero_grad()
        result = model_forward(model, x_r, ForwardMode.SYNTH_EVAL)
        loss, breakdown = bn_matching_loss(
            result.bn_batch_stats, snapshot, result.logits, labels, match_std=config.match_std, weights=weights
        )
        loss.backward()
        adam_step(adam, [x_r])
        if clip is not None:
            np.clip(x_r.data, clip[0], clip[1], out=x_r.data)
        trace.append(breakdown)

    logger.debug(
        "batch %d: total loss %.4g -> %.4g over %d steps", batch_index, trace[0].total, trace[-1].total, len(trace)
    )
    return BatchResult(batch=SyntheticBatch(x_r=x_r.detach(), labels=labels, batch_index=batch_index), trace=trace)


def synthesize_batch(model: Model, snapshot: BNStatsSnapshot, config: SynthesisConfig, batch_index: int) -> BatchResult:
    """Run ``config.steps`` Adam updates on one noise batch against a frozen model."""
    _check_layout(model, snapshot)
    with model.frozen():
        return _optimize_batch(model, snapshot, config, batch_index)


def provenance(config: SynthesisConfig, model_sha256: str) -> Dict[str, str]:
    echo = config.model_dump(mode="json", exclude={"threads"})
    meta = {f"synthesis.{key}": str(value) for key, value in sorted(echo.items())}
    meta["synthesis.iterations"] = str(config.iterations)
    meta["model.sha256"] = model_sha256
    return meta


def generate_dataset(
    model: Model,
    snapshot: BNStatsSnapshot,
    config: SynthesisConfig,
    progress: bool = False,
) -> SyntheticDataset:
    """Synthesize ``config.iterations`` independent batches; output order follows batch index."""
    _check_layout(model, snapshot)
    assign_labels(config, 0, model.class_count)
    checksum = model_checksum(model)
    indices = range(config.iterations)
    logger.info(
        "Synthesizing %d images in %d batches of %d (k=%d, threads=%d)",
        config.num_images,
        config.iterations,
        config.batch_size,
        config.steps,
        config.threads,
    )

    def run(index: int) -> BatchResult:
        return _optimize_batch(model, snapshot, config, index)

    with model.frozen():
        bar = tqdm(total=config.iterations, desc="synthesize", unit="batch", disable=not progress)
        results: List[BatchResult] = []
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as executor:
                for result in executor.map(run, indices):
                    results.append(result)
                    bar.update(1)
        else:
            for index in indices:
                results.append(run(index))
                bar.update(1)
        bar.close()

    if model_checksum(model) != checksum:
        raise InvalidStateError("Model parameters or BN statistics changed during synthesis")

    return SyntheticDataset(
        images=np.concatenate([r.batch.x_r.data for r in results]).astype(np.float32),
        labels=np.concatenate([r.batch.labels for r in results]).astype(np.int64),
        class_count=model.class_count,
        traces=[r.trace for r in results],
        provenance=provenance(config, checksum),
    )
