import csv
import json
from dataclasses import replace

import pytest

from Domain.experiment import (
    ABLATION_STRATEGIES,
    ExperimentConfig,
    MetricsReport,
    RunRecord,
    TaskKind,
    make_run_id,
)
from Domain.model_config import ModelConfig
from Domain.optim_config import OptimConfig
from Domain.strategy import StrategyConfig, StrategyKind
from Repository.run_record_repository import InMemoryRunRecordRepository
from Services.experiment_runner import (
    ALL_SHOT,
    CSV_COLUMNS,
    Cell,
    ablation_table,
    aggregate,
    build_report,
    enumerate_matrix,
    failed_record,
    flag_best,
    latest_per_seed,
    run_ablation,
    run_finetune,
    run_matrix,
    run_pretrain,
    run_sweep_gamma,
    summarize,
    sweep_series,
    write_csv,
)


def _record(
    strategy, shots, seed, dsc_values, gamma=0, task="far-domain", duration=0.01, status="ok", created_at=None
):
    metrics = MetricsReport()
    for v in dsc_values:
        metrics.add(v, v / 2)
    return RunRecord(
        run_id=f"{task}-{strategy}-{gamma}-{shots}-{seed}",
        kind="finetune",
        task=task,
        strategy=strategy,
        shots=shots,
        gamma=gamma,
        seed=seed,
        config={},
        iteration_mean_s=duration,
        metrics=metrics if status == "ok" else None,
        status=status,
        error=None if status == "ok" else "ConfigError: boom",
        created_at=created_at,
    )


@pytest.fixture
def small_config(tmp_path):
    return ExperimentConfig(
        task=TaskKind.FAR,
        shots=2,
        shots_grid=(2, 4),
        seeds=(0, 1),
        model=ModelConfig(base_width=2, depth=2),
        optim=OptimConfig(lr0=0.01, epochs=1, batch_size=2),
        pretrain_optim=OptimConfig(lr0=0.01, epochs=1, batch_size=4),
        output_dir=tmp_path,
        n_source=8,
        n_source_test=4,
        n_task=20,
        image_size=16,
        gammas=(1, 2),
        augment=False,
    )


def test_default_matrix_size():
    grid, extra = enumerate_matrix(ExperimentConfig())
    assert len(grid) == 13 * 3 * 5 == 195
    assert len(extra) == 5
    assert all(c.all_shot and c.shots == 96 and c.label == ALL_SHOT for c in extra)
    assert {c.strategy.kind for c in extra} == {StrategyKind.FROM_SCRATCH}


def test_matrix_without_all_shot():
    _, extra = enumerate_matrix(ExperimentConfig(include_all_shot=False))
    assert extra == []


def test_summarize_pools_cases_across_seeds():
    row = summarize([_record("dgst", 5, 0, [0.2, 0.4]), _record("dgst", 5, 1, [0.6, 0.8])])
    assert row["seed-count"] == 2
    assert row["dsc-mean"] == pytest.approx(0.5)
    assert row["dsc-std"] == pytest.approx(0.2581988897)
    assert row["nsd-mean"] == pytest.approx(0.25)


def test_summarize_keeps_failures():
    row = summarize([_record("lora", 5, 0, [0.5]), _record("lora", 5, 1, [], status="failed")])
    assert row["seed-count"] == 1
    assert row["errors"] == ["ConfigError: boom"]


def test_rerun_of_same_seed_keeps_latest_record():
    records = [
        _record("dgst", 5, 0, [0.2], gamma=1, created_at="2026-04-01T09:00:00.000+09:00"),
        _record("dgst", 5, 1, [0.6], gamma=1, created_at="2026-04-01T09:00:01.000+09:00"),
        _record("dgst", 5, 0, [0.8], gamma=1, created_at="2026-04-01T09:00:02.000+09:00"),
    ]
    row = summarize(records)
    assert row["seed-count"] == 2
    assert row["dsc-mean"] == pytest.approx(0.7)
    assert len(latest_per_seed(records)) == 2

    # 古い記録が後から渡されても時刻の新しい方を採る
    assert summarize(list(reversed(records)))["dsc-mean"] == pytest.approx(0.7)


def test_aggregate_orders_and_flags():
    records = [
        _record("full", 5, 0, [0.7]),
        _record("dgst", 5, 0, [0.9], gamma=1),
        _record("bias", 5, 0, [0.8]),
        _record("dgst", 10, 0, [0.5], gamma=1),
        _record(ALL_SHOT, 96, 0, [0.99]),
    ]
    rows = flag_best(aggregate(records))
    keys = [(r["task"], r["strategy"], r["shots"]) for r in rows]
    assert keys == sorted(keys)

    five = {r["strategy"]: r for r in rows if r["shots"] == 5}
    assert five["dgst"]["dsc-flag"] == "best"
    assert five["bias"]["dsc-flag"] == "second"
    assert five["full"]["dsc-flag"] == ""
    all_shot = next(r for r in rows if r["strategy"] == ALL_SHOT)
    assert all_shot["dsc-flag"] == ""


def test_csv_header_and_float_format(tmp_path):
    rows = aggregate([_record("dgst", 5, 0, [0.5], gamma=1)])
    path = write_csv(tmp_path / "out.csv", rows)
    with path.open(encoding="utf-8") as f:
        header, first = list(csv.reader(f))
    assert tuple(header) == CSV_COLUMNS
    assert first[:4] == ["far-domain", "dgst", "5", "1"]
    assert first[5] == "0.500000"


def test_sweep_series_has_reference_entry():
    records = [_record("dgst", 5, s, [0.5 + 0.04 * g], gamma=g) for g in (1, 2, 3, 5, 10) for s in (0, 1)]
    records += [_record("full", 5, s, [1.0]) for s in (0, 1)]
    result = sweep_series(records, (1, 2, 3, 5, 10))
    assert len(result["series"]) == 6
    assert result["series"][-1]["label"] == "full"
    assert result["large_gamma_approaches_full"] is True


def test_ablation_table_rows_and_ratio():
    records = []
    for kind in ABLATION_STRATEGIES:
        for shots in (5, 10):
            records.append(_record(kind.value, shots, 0, [0.5], duration=0.02 if kind.value == "dgst" else 0.01))
    table = ablation_table(records)
    assert [r["strategy"] for r in table["rows"]] == [k.value for k in ABLATION_STRATEGIES]
    assert len(table["rows"]) == 7
    assert len(table["rows"][0]["per-shots"]) == 2
    assert table["dgst_full_duration_ratio"] == pytest.approx(2.0)


def test_ablation_table_keeps_only_ablation_configuration():
    records = [
        _record("dgst", 5, 0, [0.9], gamma=1, duration=0.01),
        _record("dgst", 5, 0, [0.1], gamma=64, duration=0.05),
        _record("dgst", 20, 0, [0.3], gamma=1, duration=0.04),
        _record("full", 5, 0, [0.5], duration=0.01),
    ]
    table = ablation_table(records, gamma=1, shots_grid=(5, 10))
    dgst = next(r for r in table["rows"] if r["strategy"] == "dgst")
    assert dgst["seed-count"] == 1
    assert dgst["dsc-mean"] == pytest.approx(0.9)
    assert dgst["iter-duration-mean-s"] == pytest.approx(0.01)
    assert table["dgst_full_duration_ratio"] == pytest.approx(1.0)


def test_run_id_is_built_from_cell():
    cell = Cell(TaskKind.FAR, StrategyConfig(StrategyKind.DGST, gamma=3), 5, 2)
    same = Cell(TaskKind.FAR, StrategyConfig(StrategyKind.DGST, gamma=3), 5, 2)
    assert cell.run_id == same.run_id == make_run_id("finetune", "far-domain", "dgst", 3, 5, 2)
    assert Cell(TaskKind.FAR, StrategyConfig(StrategyKind.DGST, gamma=4), 5, 2).run_id != cell.run_id
    # 疎化しない戦略は γ を 0 として扱う
    full = Cell(TaskKind.FAR, StrategyConfig(StrategyKind.FULL, gamma=7), 5, 2)
    assert full.run_id == make_run_id("finetune", "far-domain", "full", 0, 5, 2)
    assert failed_record(cell, ExperimentConfig(), ValueError("x")).run_id == cell.run_id


def test_end_to_end_small_experiment(small_config, tmp_path):
    records = InMemoryRunRecordRepository()
    pre = run_pretrain(small_config, records)
    assert pre.kind == "pretrain"
    assert (tmp_path / "foundation.dgst").exists()
    gap = json.loads((tmp_path / "domain_gap.json").read_text(encoding="utf-8"))
    assert set(gap) == {"source", "near-domain", "far-domain"}

    row = run_finetune(small_config, records)
    assert row["seed-count"] == 2
    assert len(list((tmp_path / "checkpoints").glob("*.dgst"))) == 2

    matrix_config = replace(
        small_config,
        strategies=(StrategyKind.FULL, StrategyKind.DGST, StrategyKind.LORA),
    )
    rows = run_matrix(matrix_config, records)
    manifest = json.loads((tmp_path / "matrix-far-domain-manifest.json").read_text(encoding="utf-8"))
    assert manifest["grid_runs"] == 3 * 2 * 2
    assert manifest["all_shot_runs"] == 2
    assert (tmp_path / "matrix-far-domain.csv").exists()

    # 既定 rank 4 は極小モデルの層幅を超えるので lora セルは失敗として残る
    lora = [r for r in rows if r["strategy"] == "lora"]
    assert lora and all(r["seed-count"] == 0 and r["errors"] for r in lora)
    dgst = [r for r in rows if r["strategy"] == "dgst"]
    assert all(r["seed-count"] == 2 and 0.0 <= r["dsc-mean"] <= 1.0 for r in dgst)
    all_shot = [r for r in rows if r["strategy"] == ALL_SHOT]
    assert [r["shots"] for r in all_shot] == [16]

    sweep = run_sweep_gamma(small_config, records)
    assert len(sweep["series"]) == 3

    report = build_report(small_config, records)
    assert report["pretrain"][0]["run_id"] == pre.run_id
    assert (tmp_path / "report.csv").exists()
    assert "far-domain" in report["ablation"]


def test_ablation_runs_every_strategy(small_config):
    records = InMemoryRunRecordRepository()
    run_pretrain(small_config, records)
    table = run_ablation(replace(small_config, seeds=(0,), timing_exclusive=True), records)
    assert len(table["rows"]) == 7
    assert table["dgst_full_duration_ratio"] is not None


def test_missing_foundation_is_reported(small_config):
    with pytest.raises(FileNotFoundError):
        run_finetune(small_config, InMemoryRunRecordRepository())


def test_repeated_finetune_produces_identical_records(small_config):
    records = InMemoryRunRecordRepository()
    run_pretrain(small_config, records)
    run_finetune(small_config, records)
    first = records.list(kind="finetune")
    run_finetune(small_config, records)
    second = records.list(kind="finetune")
    assert len(second) == len(small_config.seeds)
    assert [r.run_id for r in first] == [r.run_id for r in second]
    assert first == second
