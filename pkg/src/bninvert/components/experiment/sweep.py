"""Accuracy versus synthesis budget.

Pretrains one model on real data, then for every seed trains a from-scratch
baseline on the real train split and, for every k, a from-scratch model on a
k-step synthetic dataset. All models are scored on the real test split.
"""
from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from bninvert.adapters.csv_logs import write_sweep_csv
from bninvert.adapters.dataset_synd import save_dataset
from bninvert.components.pipeline.factory import PipelineFactory
from bninvert.components.pipeline.trainer import evaluate, pretrain, train_from_scratch
from bninvert.components.synthesis.synthesizer import generate_dataset
from bninvert.core.errors import InvalidArgumentError
from bninvert.core.schemas import SynthesisConfig
from bninvert.nn.model import record_bn_stats
from bninvert.settings import RunSettings

logger = logging.getLogger(__name__)

SWEEP_CSV_NAME = "sweep.csv"
REAL = "real"
SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class SweepRow:
    kind: str
    k: int
    seed: int
    top1: float


def run_budget_sweep(
    settings: RunSettings,
    ks: Sequence[int],
    seeds: Sequence[int],
    out_dir: Optional[Path] = None,
    data_path: Optional[Path] = None,
) -> List[SweepRow]:
    if not ks or not seeds:
        raise InvalidArgumentError("Sweep needs at least one k and one seed")
    if any(k < 1 for k in ks):
        raise InvalidArgumentError(f"Every k must be >= 1, got {list(ks)}")

    factory = PipelineFactory(settings)
    dataset = factory.dataset(data_path)
    shape, classes = dataset.manifest.image_shape, dataset.manifest.class_count
    progress = settings.output.progress
    threads = settings.threads

    pretrained = factory.build_model(shape, classes)
    pretrained, _ = pretrain(pretrained, dataset.train, settings.pretrain, progress=progress)
    snapshot = record_bn_stats(pretrained)
    logger.info("Pretrained model: real test top1=%.4f", evaluate(pretrained, dataset.test, threads=threads))

    rows: List[SweepRow] = []
    for seed in seeds:
        train_cfg = settings.train.model_copy(update={"seed": seed})
        baseline, _ = train_from_scratch(
            factory.build_model(shape, classes, seed=seed), dataset.train, train_cfg, progress=progress
        )
        rows.append(SweepRow(REAL, 0, seed, evaluate(baseline, dataset.test, threads=threads)))
        logger.info("seed=%d real-data top1=%.4f", seed, rows[-1].top1)

        for k in ks:
            synth_cfg = SynthesisConfig.model_validate({**settings.synthesis_config().model_dump(), "steps": k, "seed": seed})
            synthetic = generate_dataset(pretrained, snapshot, synth_cfg, progress=progress).to_dataset(
                name=f"synthetic-k{k}-s{seed}"
            )
            if out_dir is not None:
                save_dataset(synthetic, out_dir / "datasets" / f"k{k}_seed{seed}")
            scratch_model, _ = train_from_scratch(
                factory.build_model(shape, classes, seed=seed), synthetic.train, train_cfg, progress=progress
            )
            rows.append(SweepRow(SYNTHETIC, k, seed, evaluate(scratch_model, dataset.test, threads=threads)))
            logger.info("seed=%d k=%d synthetic top1=%.4f", seed, k, rows[-1].top1)

    if out_dir is not None:
        write_sweep_csv([(r.kind, r.k, r.seed, r.top1) for r in rows], out_dir / SWEEP_CSV_NAME)
    return rows


def summarize_sweep(rows: Sequence[SweepRow]) -> Dict[Tuple[str, int], float]:
    """Median top1 per (kind, k), ordered real first then by increasing k."""
    grouped: Dict[Tuple[str, int], List[float]] = {}
    for row in rows:
        grouped.setdefault((row.kind, row.k), []).append(row.top1)
    order = sorted(grouped, key=lambda key: (key[0] != REAL, key[1]))
    return {key: statistics.median(grouped[key]) for key in order}
