"""Long-running end-to-end checks on the default desk fixture (``pytest -m slow``)."""
import statistics

import pytest

from bninvert.cli import main
from bninvert.components.experiment.sweep import REAL, SYNTHETIC, run_budget_sweep, summarize_sweep
from bninvert.components.pipeline.factory import PipelineFactory
from bninvert.components.pipeline.trainer import evaluate, pretrain
from bninvert.components.synthesis.synthesizer import generate_dataset
from bninvert.core.schemas import SynthesisConfig
from bninvert.nn.model import record_bn_stats
from bninvert.settings import load_run_settings

pytestmark = pytest.mark.slow

BUDGETS = (20, 80, 200)
SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def desk_settings():
    return load_run_settings(threads=4, output={"progress": False})


@pytest.fixture(scope="module")
def desk_pretrained(desk_settings):
    factory = PipelineFactory(desk_settings)
    data = factory.dataset()
    model = factory.build_model(data.manifest.image_shape, data.manifest.class_count)
    model, metrics = pretrain(model, data.train, desk_settings.pretrain)
    return model, data, metrics


@pytest.fixture(scope="module")
def sweep_summary(desk_settings):
    return summarize_sweep(run_budget_sweep(desk_settings, BUDGETS, SEEDS))


def test_pretrain_separates_the_fixture(desk_pretrained) -> None:
    model, data, _ = desk_pretrained
    assert evaluate(model, data.test, threads=4) >= 0.90


def test_synthesis_descends_at_k200(desk_settings, desk_pretrained) -> None:
    model, _, _ = desk_pretrained
    snapshot = record_bn_stats(model)
    ratios = []
    for seed in SEEDS:
        base = desk_settings.synthesis_config().model_dump()
        cfg = SynthesisConfig.model_validate({**base, "steps": 200, "seed": seed, "num_images": 10 * base["batch_size"]})
        for trace in generate_dataset(model, snapshot, cfg).traces:
            ratios.append(trace[-1].total / trace[0].total)
    assert len(ratios) == 30
    assert statistics.median(ratios) <= 0.30


def test_accuracy_does_not_drop_with_budget(sweep_summary) -> None:
    synthetic = [sweep_summary[(SYNTHETIC, k)] for k in BUDGETS]
    for lower, higher in zip(synthetic, synthetic[1:]):
        assert higher >= lower - 0.015
    assert sweep_summary[(SYNTHETIC, 200)] >= 0.375


def test_real_data_beats_best_synthetic(sweep_summary) -> None:
    best = max(sweep_summary[(SYNTHETIC, k)] for k in BUDGETS)
    assert sweep_summary[(REAL, 0)] >= best + 0.05


def _pipeline(root, config) -> None:
    common = ["--config", str(config)]
    assert main(["make-fixture", *common, "--out", str(root / "fixture")]) == 0
    assert main(["pretrain", *common, "--data", str(root / "fixture"), "--out", str(root / "pretrain")]) == 0
    ckpt = str(root / "pretrain" / "model.bnck")
    assert main(["synthesize", *common, "--checkpoint", ckpt, "--out", str(root / "synth")]) == 0
    args = ["train", *common, "--data", str(root / "synth"), "--eval-data", str(root / "fixture")]
    assert main([*args, "--out", str(root / "train")]) == 0


def test_end_to_end_runs_are_byte_identical(tmp_path) -> None:
    config = tmp_path / "run.toml"
    config.write_text("threads = 4\n[output]\nprogress = false\n", encoding="utf-8")
    _pipeline(tmp_path / "a", config)
    _pipeline(tmp_path / "b", config)
    for rel in (
        "pretrain/model.bnck",
        "pretrain/metrics.csv",
        "synth/manifest.txt",
        "synth/train_images.bin",
        "synth/train_labels.bin",
        "synth/loss_trace.csv",
        "train/model.bnck",
        "train/metrics.csv",
    ):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
