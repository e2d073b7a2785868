from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError

from bninvert.adapters.checkpoint_bnck import load_checkpoint, save_checkpoint
from bninvert.adapters.csv_logs import format_float, write_loss_trace_csv, write_metrics_csv
from bninvert.adapters.dataset_synd import Dataset, Split, load_dataset, save_dataset
from bninvert.adapters.ppm_export import export_images
from bninvert.components.experiment.sweep import SWEEP_CSV_NAME, SYNTHETIC, run_budget_sweep, summarize_sweep
from bninvert.components.pipeline.factory import PipelineFactory
from bninvert.components.pipeline.trainer import evaluate, make_eval_fn, pretrain, train_from_scratch
from bninvert.components.synthesis.synthesizer import generate_dataset
from bninvert.core.errors import (
    ConfigError,
    FormatError,
    InvalidArgumentError,
    InvalidModelError,
    ShapeError,
)
from bninvert.nn.model import Model, record_bn_stats
from bninvert.settings import RunSettings, load_run_settings, write_resolved_config

logger = logging.getLogger("bninvert")

CHECKPOINT_NAME = "model.bnck"
METRICS_NAME = "metrics.csv"
LOSS_TRACE_NAME = "loss_trace.csv"
SAMPLES_DIR = "samples"

USAGE_ERRORS = (
    ConfigError,
    ValidationError,
    FileNotFoundError,
    FileExistsError,
    ShapeError,
    InvalidArgumentError,
    InvalidModelError,
    FormatError,
)


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and not out.is_dir():
        raise FileExistsError(f"Output path exists and is not a directory: {out}")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise FileExistsError(f"Output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _settings(args: argparse.Namespace, **sections: Dict[str, Any]) -> RunSettings:
    overrides: Dict[str, Any] = {name: values for name, values in sections.items() if values}
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.log_level is not None:
        overrides["log_level"] = args.log_level
    settings = load_run_settings(getattr(args, "config", None), **overrides)
    _configure_logging(settings.log_level)
    return settings


def _seeded(args: argparse.Namespace, *sections: str) -> Dict[str, Dict[str, Any]]:
    seed = getattr(args, "seed", None)
    return {name: {"seed": seed} for name in sections} if seed is not None else {}


def _eval_split(dataset: Dataset) -> Split:
    return dataset.splits["test"] if "test" in dataset.splits else dataset.train


def _check_compatible(model: Model, dataset: Dataset, what: str) -> None:
    shape = tuple(dataset.manifest.image_shape)
    if shape != tuple(model.input_shape) or dataset.manifest.class_count != model.class_count:
        raise ShapeError(
            f"{what} has dims {shape} with {dataset.manifest.class_count} classes; "
            f"model expects {tuple(model.input_shape)} with {model.class_count} classes"
        )


def cmd_make_fixture(args: argparse.Namespace) -> int:
    settings = _settings(args)
    out = _prepare_out(args.out, args.force)
    dataset = PipelineFactory(settings).generate_fixture(seed=args.seed)
    save_dataset(dataset, out)
    write_resolved_config(settings, out, {"command": "make-fixture", "seed": dataset.manifest.metadata["seed"]})
    sizes = ", ".join(f"{name}={size}" for name, size in sorted(dataset.manifest.split_sizes.items()))
    print(f"Wrote fixture '{dataset.manifest.name}' ({sizes}) to {out}")
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    settings = _settings(args, **_seeded(args, "model", "pretrain"))
    factory = PipelineFactory(settings)
    dataset = factory.dataset(args.data)
    out = _prepare_out(args.out, args.force)

    if args.init_checkpoint is not None:
        model = load_checkpoint(args.init_checkpoint)
        _check_compatible(model, dataset, "Dataset")
        logger.info("Finetuning from %s", args.init_checkpoint)
    else:
        model = factory.build_model(dataset.manifest.image_shape, dataset.manifest.class_count)

    eval_fn = None
    if "test" in dataset.splits:
        eval_fn = make_eval_fn(dataset.test, batch_size=settings.output.eval_batch_size, threads=settings.threads)
    model, metrics = pretrain(
        model,
        dataset.train,
        settings.pretrain,
        eval_fn=eval_fn,
        checkpoint_path=out / CHECKPOINT_NAME,
        progress=settings.output.progress,
    )
    write_metrics_csv(metrics, out / METRICS_NAME)
    write_resolved_config(settings, out, {"command": "pretrain", "data": str(args.data or "")})
    logger.info("Training took %.1fs", metrics.wall_clock_s)
    print(f"Wrote checkpoint to {out / CHECKPOINT_NAME}")
    if metrics.final_test_acc is not None:
        print(f"top1={format_float(metrics.final_test_acc)}")
    return 0


def cmd_synthesize(args: argparse.Namespace) -> int:
    synthesis: Dict[str, Any] = {}
    if args.k is not None:
        synthesis["steps"] = args.k
    if args.n is not None:
        synthesis["num_images"] = args.n
    if args.seed is not None:
        synthesis["seed"] = args.seed
    settings = _settings(args, synthesis=synthesis)
    config = settings.synthesis_config()
    model = load_checkpoint(args.checkpoint)
    snapshot = record_bn_stats(model)
    out = _prepare_out(args.out, args.force)

    synthetic = generate_dataset(model, snapshot, config, progress=settings.output.progress)
    dataset = synthetic.to_dataset(name=f"synthetic-k{config.steps}")
    save_dataset(dataset, out)
    write_loss_trace_csv(synthetic.traces, out / LOSS_TRACE_NAME)
    if settings.output.samples_per_class:
        export_images(
            synthetic.images,
            synthetic.labels,
            out / SAMPLES_DIR,
            max_per_class=settings.output.samples_per_class,
            grid_cols=settings.output.grid_cols,
        )
    write_resolved_config(settings, out, {"command": "synthesize", "checkpoint": str(args.checkpoint)})
    final = [trace[-1].total for trace in synthetic.traces]
    print(f"Wrote {len(synthetic)} synthetic images (k={config.steps}) to {out}")
    print(f"final_loss_mean={format_float(sum(final) / len(final))}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    settings = _settings(args, **_seeded(args, "model", "train"))
    factory = PipelineFactory(settings)
    data = load_dataset(args.data, normalize=True)
    eval_data = load_dataset(args.eval_data, normalize=True) if args.eval_data is not None else None
    out = _prepare_out(args.out, args.force)

    model = factory.build_model(data.manifest.image_shape, data.manifest.class_count)
    eval_fn = None
    if eval_data is not None:
        _check_compatible(model, eval_data, "Evaluation dataset")
        eval_fn = make_eval_fn(_eval_split(eval_data), batch_size=settings.output.eval_batch_size, threads=settings.threads)

    model, metrics = train_from_scratch(model, data.train, settings.train, eval_fn=eval_fn, progress=settings.output.progress)
    save_checkpoint(model, out / CHECKPOINT_NAME)
    write_metrics_csv(metrics, out / METRICS_NAME)
    write_resolved_config(settings, out, {"command": "train", "data": str(args.data)})
    logger.info("Training took %.1fs", metrics.wall_clock_s)
    print(f"Wrote checkpoint to {out / CHECKPOINT_NAME}")
    if metrics.final_test_acc is not None:
        print(f"top1={format_float(metrics.final_test_acc)}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _settings(args)
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, normalize=True)
    _check_compatible(model, dataset, "Dataset")
    top1 = evaluate(model, _eval_split(dataset), batch_size=settings.output.eval_batch_size, threads=settings.threads)
    print(f"top1={format_float(top1)}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = _settings(args)
    out = _prepare_out(args.out, args.force)
    write_resolved_config(settings, out, {"command": "sweep", "k": args.k, "seeds": args.seeds})
    rows = run_budget_sweep(settings, args.k, args.seeds, out_dir=out, data_path=args.data)
    for (kind, k), top1 in summarize_sweep(rows).items():
        label = f"k={k}" if kind == SYNTHETIC else kind
        print(f"{label} top1_median={format_float(top1)}")
    print(f"Wrote {out / SWEEP_CSV_NAME}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="Worker cap (falls back to BNINVERT_THREADS)")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None)

    configured = argparse.ArgumentParser(add_help=False, parents=[common])
    configured.add_argument("--config", type=Path, default=None, help="TOML run config")

    writes = argparse.ArgumentParser(add_help=False)
    writes.add_argument("--out", type=Path, required=True)
    writes.add_argument("--force", action="store_true", help="Write into a non-empty output directory")

    parser = argparse.ArgumentParser(
        prog="bninvert",
        description="Synthesize shareable training data from a BatchNorm network's recorded statistics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-fixture", parents=[configured, writes], help="Generate the procedural shapes dataset")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_make_fixture)

    p = sub.add_parser("pretrain", parents=[configured, writes], help="Train a BN model on original data")
    p.add_argument("--data", type=Path, default=None, help="SYND dataset directory (default: generate the fixture)")
    p.add_argument("--init-checkpoint", type=Path, default=None, help="Finetune from this BNCK checkpoint")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("synthesize", parents=[configured, writes], help="Generate a synthetic dataset from a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--k", type=int, default=None, help="Optimization steps per batch")
    p.add_argument("--n", type=int, default=None, help="Total synthetic images")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_synthesize)

    p = sub.add_parser("train", parents=[configured, writes], help="Train a fresh model from scratch")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--eval-data", type=Path, default=None, help="Dataset whose test split is scored every epoch")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[configured], help="Top-1 accuracy of a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", parents=[configured, writes], help="Accuracy versus synthesis budget k")
    p.add_argument("--k", type=int, nargs="+", default=[20, 80, 200])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--data", type=Path, default=None)
    p.set_defaults(handler=cmd_sweep)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.exception("Unhandled error in '%s'", args.command)
        print(f"error: internal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
