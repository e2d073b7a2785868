from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

from bninvert.core.schemas import EpochRecord, LossBreakdown, Metrics

METRICS_HEADER = ("epoch", "train_loss", "test_acc")
LOSS_TRACE_HEADER = ("batch", "step", "bn_mean", "bn_var", "ce", "total")
SWEEP_HEADER = ("kind", "k", "seed", "top1")


def format_float(value: Optional[float]) -> str:
    """Shortest round-tripping text for a float; blank for None."""
    return "" if value is None else repr(float(value))


def _write(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_metrics_csv(metrics: Metrics, path: Path) -> Path:
    rows = ((r.epoch, format_float(r.train_loss), format_float(r.test_acc)) for r in metrics.epochs)
    return _write(path, METRICS_HEADER, rows)


def read_metrics_csv(path: Path) -> Metrics:
    with path.open("r", encoding="utf-8", newline="") as f:
        records = [
            EpochRecord(
                epoch=int(row["epoch"]),
                train_loss=float(row["train_loss"]),
                test_acc=float(row["test_acc"]) if row["test_acc"] else None,
            )
            for row in csv.DictReader(f)
        ]
    return Metrics(epochs=records)


def write_loss_trace_csv(traces: Sequence[Sequence[LossBreakdown]], path: Path) -> Path:
    rows = (
        (batch, step, format_float(b.bn_mean_term), format_float(b.bn_var_term), format_float(b.ce_term), format_float(b.total))
        for batch, trace in enumerate(traces)
        for step, b in enumerate(trace)
    )
    return _write(path, LOSS_TRACE_HEADER, rows)


def write_sweep_csv(rows: List[Tuple[str, int, int, float]], path: Path) -> Path:
    return _write(path, SWEEP_HEADER, ((kind, k, seed, format_float(top1)) for kind, k, seed, top1 in rows))
