"""
学習を伴う統計的なチェック。時間がかかるので DGST_RUN_SLOW=1 のときだけ実行する。
far-domain・5-shot・5 seed で比較する。
"""
import json
import statistics

import pytest

from Domain.experiment import ExperimentConfig, TaskKind
from Domain.model_config import ModelConfig
from Domain.optim_config import OptimConfig
from Domain.strategy import StrategyConfig, StrategyKind
from Network.unet import build_unet
from Repository.run_record_repository import InMemoryRunRecordRepository
from Services.experiment_runner import Cell, load_foundation, run_cell, run_pretrain
from Services.loss_metrics import evaluate_dataset
from Services.synth_data import AugmentConfig, generate_domain, task_domain
from Services.trainer import finetune_loop

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory):
    config = ExperimentConfig(
        task=TaskKind.FAR,
        shots=5,
        seeds=SEEDS,
        model=ModelConfig(),
        optim=OptimConfig(lr0=0.01, epochs=30),
        pretrain_optim=OptimConfig(lr0=0.01, epochs=40, batch_size=4),
        output_dir=tmp_path_factory.mktemp("behavior"),
        n_source=96,
        n_source_test=24,
        n_task=40,
        image_size=32,
        timing_exclusive=True,
    )
    record = run_pretrain(config, InMemoryRunRecordRepository())
    return config, record


def _mean_dsc(config, foundation, strategy):
    values = [
        run_cell(config, Cell(TaskKind.FAR, strategy, config.shots, seed), foundation).metrics.dsc_mean
        for seed in config.seeds
    ]
    return statistics.fmean(values)


def test_foundation_reaches_source_quality(pretrained):
    _, record = pretrained
    assert record.metrics.dsc_mean >= 0.85


def test_foundation_scores_near_domain_above_far_domain(pretrained):
    config, record = pretrained
    gap = json.loads((config.output_dir / "domain_gap.json").read_text(encoding="utf-8"))
    assert gap["far-domain"]["dsc_mean"] < record.metrics.dsc_mean

    foundation = load_foundation(config, [StrategyKind.FULL])
    near, far = [], []
    for seed in SEEDS:
        near_set = generate_domain(task_domain(TaskKind.NEAR, config.image_size), 20, seed)
        far_set = generate_domain(task_domain(TaskKind.FAR, config.image_size), 20, seed)
        near.append(evaluate_dataset(foundation, near_set.samples).dsc_mean)
        far.append(evaluate_dataset(foundation, far_set.samples).dsc_mean)
    assert statistics.fmean(near) > statistics.fmean(far)


def test_full_finetuning_beats_from_scratch(pretrained):
    config, _ = pretrained
    foundation = load_foundation(config, [StrategyKind.FULL])
    full = _mean_dsc(config, foundation, StrategyConfig(StrategyKind.FULL))
    scratch = _mean_dsc(config, None, StrategyConfig(StrategyKind.FROM_SCRATCH))
    assert full > scratch


def test_dgst_keeps_up_with_full_finetuning(pretrained):
    config, _ = pretrained
    foundation = load_foundation(config, [StrategyKind.DGST])
    full = _mean_dsc(config, foundation, StrategyConfig(StrategyKind.FULL))
    dgst = _mean_dsc(config, foundation, StrategyConfig(StrategyKind.DGST, gamma=1))
    assert dgst >= full - 0.01


def test_dgst_beats_bias_norm_on_far_domain(pretrained):
    config, _ = pretrained
    foundation = load_foundation(config, [StrategyKind.DGST])
    dgst = _mean_dsc(config, foundation, StrategyConfig(StrategyKind.DGST, gamma=1))
    bias_norm = _mean_dsc(config, foundation, StrategyConfig(StrategyKind.BIAS_NORM))
    assert dgst > bias_norm


def test_dgst_mean_iteration_time_is_under_twice_full():
    # 既定サイズのモデル（base_width 8, depth 3, 64x64）で測る
    model_config = ModelConfig()
    foundation = build_unet(model_config, seed=0)
    samples = generate_domain(task_domain(TaskKind.FAR, 64), 5, seed=0).samples
    optim = OptimConfig(epochs=4)
    no_augment = AugmentConfig.disabled()

    finetune_loop(foundation, StrategyConfig(StrategyKind.FULL), samples, OptimConfig(epochs=1), seed=0,
                  augment_config=no_augment)
    _, full = finetune_loop(foundation, StrategyConfig(StrategyKind.FULL), samples, optim, seed=0,
                            augment_config=no_augment)
    _, dgst = finetune_loop(foundation, StrategyConfig(StrategyKind.DGST), samples, optim, seed=0,
                            augment_config=no_augment)
    assert dgst.iteration_mean_s < 2.0 * full.iteration_mean_s
