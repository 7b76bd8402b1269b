"""
CLI コマンドの中身（pretrain / finetune / matrix / sweep-gamma / ablation / report）。

各セル (task, strategy, shots, seed) は独立に実行でき、結果は RunRecord として
リポジトリに保存される。表の集計は保存済み記録だけから再構成できる。
"""
from __future__ import annotations

import csv
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from Domain.data import Dataset
from Domain.experiment import (
    ABLATION_STRATEGIES,
    ExperimentConfig,
    MetricsReport,
    RunRecord,
    TaskKind,
    make_run_id,
)
from Domain.strategy import StrategyConfig, StrategyKind
from Network.unet import Model
from Repository.checkpoint_repository import CHECKPOINT_SUFFIX, load_checkpoint, save_checkpoint
from Repository.dataset_repository import DatasetCache
from Repository.db import get_db_path, init_db
from Repository.run_record_repository import (
    BaseRunRecordRepository,
    JsonDirRunRecordRepository,
    SqliteRunRecordRepository,
)
from Services.loss_metrics import evaluate_dataset
from Services.synth_data import (
    AugmentConfig,
    few_shot_split,
    holdout_count,
    source_domain,
    task_domain,
    training_pool,
)
from Services.trainer import finetune_loop, pretrain_loop
from settings import get_bool_env
from time_utils import record_timestamp

logger = logging.getLogger(__name__)

ALL_SHOT = "all-shot"
CSV_COLUMNS = (
    "task",
    "strategy",
    "shots",
    "gamma",
    "seed-count",
    "dsc-mean",
    "dsc-std",
    "nsd-mean",
    "nsd-std",
    "iter-duration-mean-s",
)


@dataclass(frozen=True)
class Cell:
    """行列の 1 実行単位"""

    task: TaskKind
    strategy: StrategyConfig
    shots: int
    seed: int
    all_shot: bool = False

    @property
    def label(self) -> str:
        return ALL_SHOT if self.all_shot else self.strategy.kind.value

    @property
    def gamma(self) -> int:
        return self.strategy.gamma if self.strategy.kind.is_sparsified else 0

    @property
    def run_id(self) -> str:
        return make_run_id("finetune", self.task.value, self.label, self.gamma, self.shots, self.seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task.value,
            "strategy": self.label,
            "shots": self.shots,
            "gamma": self.gamma,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# 共通部品
# ---------------------------------------------------------------------------


def make_record_repository(output_dir: Path) -> BaseRunRecordRepository:
    """
    環境変数 USE_SQLITE でバックエンドを切り替える。
    SQLite のファイルは DB_PATH が無ければ output_dir 直下に置く。
    """
    if get_bool_env("USE_SQLITE", False):
        db_path = get_db_path(output_dir)
        logger.info("[Config] Using SqliteRunRecordRepository path=%s", db_path)
        init_db(db_path)
        return SqliteRunRecordRepository(db_path)
    return JsonDirRunRecordRepository(Path(output_dir) / "records")


def foundation_path(config: ExperimentConfig) -> Path:
    return Path(config.foundation) if config.foundation else Path(config.output_dir) / f"foundation{CHECKPOINT_SUFFIX}"


def augment_config(config: ExperimentConfig) -> AugmentConfig:
    return AugmentConfig() if config.augment else AugmentConfig.disabled()


def _cache(config: ExperimentConfig) -> DatasetCache:
    return DatasetCache(Path(config.output_dir) / "data")


def source_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """
    ソースドメインの (学習, テスト)。1 本生成して先頭 n_source 枚とそれ以降に分ける。
    """
    spec = source_domain(config.image_size)
    full = _cache(config).load_or_generate(spec, config.n_source + config.n_source_test, config.pretrain_seed)
    n = config.n_source
    return (
        full.subset(list(range(n))),
        full.subset(list(range(n, len(full)))),
    )


def task_dataset(config: ExperimentConfig, task: Optional[TaskKind] = None) -> Dataset:
    spec = task_domain(task or config.task, config.image_size)
    return _cache(config).load_or_generate(spec, config.n_task, config.split_seed)


def strategy_for(kind: StrategyKind, base: StrategyConfig, gamma: Optional[int] = None) -> StrategyConfig:
    return replace(base, kind=kind, gamma=gamma if gamma is not None else base.gamma)


def load_foundation(config: ExperimentConfig, kinds: Iterable[StrategyKind]) -> Optional[Model]:
    if not any(k.needs_foundation for k in kinds):
        return None
    path = foundation_path(config)
    if not path.exists():
        raise FileNotFoundError(f"foundation checkpoint not found: {path} (run `pretrain` first)")
    return load_checkpoint(path, config.model)


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------


def evaluate_domain_gap(model: Model, config: ExperimentConfig) -> dict[str, dict[str, float]]:
    """
    基盤モデルをそのまま（ゼロショット）各タスクの共有テスト分割で評価する。
    """
    gap = {}
    for task in TaskKind:
        dataset = task_dataset(config, task)
        _, test = few_shot_split(dataset, task.default_shots[0], config.split_seed)
        report = evaluate_dataset(model, test.samples, config.nsd_tolerance)
        gap[task.value] = {"dsc_mean": report.dsc_mean, "nsd_mean": report.nsd_mean}
        logger.info("[Pretrain] zero-shot task=%s dsc=%.4f nsd=%.4f", task.value, report.dsc_mean, report.nsd_mean)
    return gap


def run_pretrain(
    config: ExperimentConfig,
    records: Optional[BaseRunRecordRepository] = None,
) -> RunRecord:
    output_dir = Path(config.output_dir)
    records = records or make_record_repository(output_dir)
    train, test = source_datasets(config)
    model, record = pretrain_loop(
        config.model, train.samples, config.pretrain_optim, config.pretrain_seed,
        augment_config=augment_config(config),
    )
    record.metrics = evaluate_dataset(model, test.samples, config.nsd_tolerance)
    path = save_checkpoint(model, foundation_path(config))
    record.checkpoint_path = str(path)
    record.config = config.to_dict()
    records.add(record)

    gap = evaluate_domain_gap(model, config)
    _write_json(output_dir / "domain_gap.json", {"source": record.metrics.to_dict(), **gap})
    logger.info(
        "[Pretrain] done source dsc=%.4f nsd=%.4f iters=%d checkpoint=%s",
        record.metrics.dsc_mean, record.metrics.nsd_mean, record.iterations, path,
    )
    return record


# ---------------------------------------------------------------------------
# 1 セルの実行
# ---------------------------------------------------------------------------


def run_cell(
    config: ExperimentConfig,
    cell: Cell,
    foundation: Optional[Model],
    checkpoint_dir: Optional[Path] = None,
) -> RunRecord:
    """
    1 セルを学習・評価する。例外はそのまま送出する（行列側で失敗記録に変換）。
    """
    dataset = task_dataset(config, cell.task)
    if cell.all_shot:
        train = training_pool(dataset, config.split_seed)
        _, test = few_shot_split(dataset, 1, config.split_seed)
    else:
        train, test = few_shot_split(dataset, cell.shots, config.split_seed)

    model, record = finetune_loop(
        foundation, cell.strategy, train.samples, config.optim, cell.seed,
        model_config=config.model,
        augment_config=augment_config(config),
        task=cell.task.value,
    )
    record.strategy = cell.label
    record.run_id = cell.run_id
    record.metrics = evaluate_dataset(model, test.samples, config.nsd_tolerance)
    record.config = {**config.to_dict(), "strategy": cell.strategy.to_dict(), "cell": cell.to_dict()}
    if checkpoint_dir is not None:
        path = Path(checkpoint_dir) / (
            f"{cell.task.value}-{cell.label}-g{record.gamma}-k{cell.shots}-s{cell.seed}{CHECKPOINT_SUFFIX}"
        )
        record.checkpoint_path = str(save_checkpoint(model, path))
    logger.info(
        "[Cell] task=%s strategy=%s shots=%d seed=%d dsc=%.4f nsd=%.4f iter=%.4fs",
        cell.task.value, cell.label, cell.shots, cell.seed,
        record.metrics.dsc_mean, record.metrics.nsd_mean, record.iteration_mean_s,
    )
    return record


def failed_record(cell: Cell, config: ExperimentConfig, error: BaseException) -> RunRecord:
    info = cell.to_dict()
    return RunRecord(
        run_id=cell.run_id,
        kind="finetune",
        task=cell.task.value,
        strategy=cell.label,
        shots=cell.shots,
        gamma=cell.gamma,
        seed=cell.seed,
        config={**config.to_dict(), "cell": info},
        status="failed",
        error=f"{type(error).__name__}: {error}",
        created_at=record_timestamp(),
    )


# プロセスプール側のキャッシュ（ワーカーごとに 1 回だけ基盤モデルを読む）
_WORKER_FOUNDATION: dict[str, Optional[Model]] = {}


def _worker(payload: tuple[ExperimentConfig, Cell]) -> RunRecord:
    config, cell = payload
    key = str(foundation_path(config))
    try:
        foundation = None
        if cell.strategy.kind.needs_foundation and not cell.all_shot:
            if key not in _WORKER_FOUNDATION:
                _WORKER_FOUNDATION[key] = load_foundation(config, [cell.strategy.kind])
            foundation = _WORKER_FOUNDATION[key]
        return run_cell(config, cell, foundation)
    except Exception as e:  # noqa: BLE001 - セル単位の失敗として記録する
        return failed_record(cell, config, e)


def run_cells(
    config: ExperimentConfig,
    cells: Sequence[Cell],
    records: BaseRunRecordRepository,
) -> list[RunRecord]:
    """
    セル群を実行して記録する。失敗したセルは status=failed として残し、残りは続行する。
    timing_exclusive のときは常に 1 プロセスで順に実行する。
    """
    workers = 1 if config.timing_exclusive else config.workers
    results: list[RunRecord] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for record in pool.map(_worker, [(config, c) for c in cells]):
                records.add(record)
                results.append(record)
        return results

    foundation = None
    if any(c.strategy.kind.needs_foundation and not c.all_shot for c in cells):
        foundation = load_foundation(config, [c.strategy.kind for c in cells])
    for i, cell in enumerate(cells, start=1):
        try:
            record = run_cell(config, cell, foundation)
        except Exception as e:  # noqa: BLE001 - 行列は止めない
            logger.error("[Matrix] cell failed %s: %s", cell.to_dict(), e)
            record = failed_record(cell, config, e)
        records.add(record)
        results.append(record)
        logger.info("[Matrix] progress %d/%d", i, len(cells))
    return results


# ---------------------------------------------------------------------------
# 集計
# ---------------------------------------------------------------------------


def latest_per_seed(records: Iterable[RunRecord]) -> list[RunRecord]:
    """
    (task, strategy, shots, gamma, seed) ごとに最新の 1 件だけ残す。
    created_at が同じ（または無い）ときは後から渡された方を採る。
    """
    latest: dict[tuple, RunRecord] = {}
    for r in records:
        key = (r.task, r.strategy, r.shots, r.gamma, r.seed)
        kept = latest.get(key)
        if kept is None or (r.created_at or "") >= (kept.created_at or ""):
            latest[key] = r
    return list(latest.values())


def summarize(records: Sequence[RunRecord]) -> dict[str, Any]:
    """
    同一セルの記録（seed 違い）を 1 行にまとめる。症例ごとの値を seed 横断でプールした平均 ± 標本標準偏差。
    同じ seed の再実行は最新の記録だけを使う。
    """
    records = latest_per_seed(records)
    ok = [r for r in records if r.status == "ok" and r.metrics is not None]
    pooled = MetricsReport()
    for r in ok:
        pooled.extend(r.metrics)
    first = records[0]
    row: dict[str, Any] = {
        "task": first.task,
        "strategy": first.strategy,
        "shots": first.shots,
        "gamma": first.gamma,
        "seed-count": len({r.seed for r in ok}),
        "dsc-mean": pooled.dsc_mean if ok else None,
        "dsc-std": pooled.dsc_std if ok else None,
        "nsd-mean": pooled.nsd_mean if ok else None,
        "nsd-std": pooled.nsd_std if ok else None,
        "iter-duration-mean-s": statistics.fmean(r.iteration_mean_s for r in ok) if ok else None,
    }
    failures = [r.error for r in records if r.status != "ok"]
    if failures:
        row["errors"] = failures
    return row


def _row_key(row: dict[str, Any]) -> tuple:
    return (row["task"], row["strategy"], row["shots"])


def aggregate(records: Iterable[RunRecord]) -> list[dict[str, Any]]:
    """
    (task, strategy, shots, gamma) ごとに集計し、(task, strategy, shots) で安定ソートした行を返す。
    """
    cells: dict[tuple, list[RunRecord]] = {}
    for r in records:
        cells.setdefault((r.task, r.strategy, r.shots, r.gamma), []).append(r)
    rows = [summarize(v) for _, v in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], kv[0][3]))]
    return sorted(rows, key=_row_key)


def flag_best(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """
    (task, shots) 列ごとに DSC / NSD の最良・次点に印を付ける。All-shot 参照行は対象外。
    """
    for metric in ("dsc", "nsd"):
        column: dict[tuple, list[dict[str, Any]]] = {}
        for row in rows:
            row[f"{metric}-flag"] = ""
            if row["strategy"] == ALL_SHOT or row[f"{metric}-mean"] is None:
                continue
            column.setdefault((row["task"], row["shots"]), []).append(row)
        for members in column.values():
            ranked = sorted(members, key=lambda r: -r[f"{metric}-mean"])
            for row, flag in zip(ranked, ("best", "second")):
                row[f"{metric}-flag"] = flag
    return rows


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path: Path, rows: Sequence[dict[str, Any]], columns: Sequence[str] = CSV_COLUMNS) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    return path


def _write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# コマンド
# ---------------------------------------------------------------------------


def run_finetune(
    config: ExperimentConfig,
    records: Optional[BaseRunRecordRepository] = None,
) -> dict[str, Any]:
    """
    指定戦略・shots を全 seed で実行し、seed 横断の平均 ± 標準偏差を返す。
    from-scratch は基盤モデルを読まない。
    """
    output_dir = Path(config.output_dir)
    records = records or make_record_repository(output_dir)
    foundation = load_foundation(config, [config.strategy.kind])
    results = []
    for seed in config.seeds:
        cell = Cell(config.task, config.strategy, config.shots, seed)
        record = run_cell(config, cell, foundation, checkpoint_dir=output_dir / "checkpoints")
        records.add(record)
        results.append(record)
    row = summarize(results)
    logger.info(
        "[Finetune] %s shots=%d seeds=%d dsc=%.4f±%.4f nsd=%.4f±%.4f",
        config.strategy.label, config.shots, len(results),
        row["dsc-mean"], row["dsc-std"], row["nsd-mean"], row["nsd-std"],
    )
    return row


def enumerate_matrix(config: ExperimentConfig) -> tuple[list[Cell], list[Cell]]:
    """
    (表のセル, All-shot 参照セル)。表は strategies × shots_grid × seeds。
    """
    grid = [
        Cell(config.task, strategy_for(kind, config.strategy), shots, seed)
        for kind in config.strategies
        for shots in config.shots_grid
        for seed in config.seeds
    ]
    extra: list[Cell] = []
    if config.include_all_shot:
        pool = config.n_task - holdout_count(config.n_task)
        extra = [
            Cell(config.task, strategy_for(StrategyKind.FROM_SCRATCH, config.strategy), pool, seed, all_shot=True)
            for seed in config.seeds
        ]
    return grid, extra


def run_matrix(
    config: ExperimentConfig,
    records: Optional[BaseRunRecordRepository] = None,
) -> list[dict[str, Any]]:
    output_dir = Path(config.output_dir)
    records = records or make_record_repository(output_dir)
    grid, extra = enumerate_matrix(config)
    _write_json(
        output_dir / f"matrix-{config.task.value}-manifest.json",
        {
            "grid_runs": len(grid),
            "all_shot_runs": len(extra),
            "runs": [c.to_dict() for c in grid + extra],
        },
    )
    logger.info("[Matrix] task=%s runs=%d (+%d all-shot)", config.task.value, len(grid), len(extra))
    results = run_cells(config, grid + extra, records)
    rows = flag_best(aggregate(results))
    write_csv(output_dir / f"matrix-{config.task.value}.csv", rows)
    _write_json(output_dir / f"matrix-{config.task.value}.json", {"config": config.to_dict(), "rows": rows})
    return rows


def run_sweep_gamma(
    config: ExperimentConfig,
    records: Optional[BaseRunRecordRepository] = None,
) -> dict[str, Any]:
    """
    DGST を γ ごとに、Full を参照として 1 本実行し、プロット用の系列を出力する。
    """
    output_dir = Path(config.output_dir)
    records = records or make_record_repository(output_dir)
    cells = [
        Cell(config.task, strategy_for(StrategyKind.DGST, config.strategy, gamma), config.shots, seed)
        for gamma in config.gammas
        for seed in config.seeds
    ]
    cells += [
        Cell(config.task, strategy_for(StrategyKind.FULL, config.strategy), config.shots, seed)
        for seed in config.seeds
    ]
    results = run_cells(config, cells, records)
    series = sweep_series(results, config.gammas)
    stem = f"sweep-gamma-{config.task.value}-k{config.shots}"
    write_csv(output_dir / f"{stem}.csv", series["series"], ("label", "gamma", *CSV_COLUMNS[4:]))
    _write_json(output_dir / f"{stem}.json", series)
    return series


def sweep_series(records: Sequence[RunRecord], gammas: Sequence[int]) -> dict[str, Any]:
    by_gamma: dict[int, list[RunRecord]] = {}
    full: list[RunRecord] = []
    for r in records:
        if r.strategy == StrategyKind.FULL.value:
            full.append(r)
        elif r.strategy == StrategyKind.DGST.value:
            by_gamma.setdefault(r.gamma, []).append(r)
    series = []
    for gamma in gammas:
        row = summarize(by_gamma[gamma])
        series.append({"label": f"dgst(gamma={gamma})", **row})
    reference = summarize(full)
    series.append({"label": "full", **reference})

    approaches_full = None
    ok = [s for s in series[:-1] if s["dsc-mean"] is not None]
    if len(ok) >= 2 and reference["dsc-mean"] is not None:
        small, large = ok[0], ok[-1]
        approaches_full = abs(large["dsc-mean"] - reference["dsc-mean"]) <= abs(
            small["dsc-mean"] - reference["dsc-mean"]
        )
    return {"series": series, "large_gamma_approaches_full": approaches_full}


def run_ablation(
    config: ExperimentConfig,
    records: Optional[BaseRunRecordRepository] = None,
) -> dict[str, Any]:
    """
    アブレーション 7 戦略を shots グリッド上で実行し、反復時間つきの表を出力する。
    """
    output_dir = Path(config.output_dir)
    records = records or make_record_repository(output_dir)
    if not config.timing_exclusive:
        logger.warning("[Ablation] timing_exclusive is off; iteration durations may be skewed")
    cells = [
        Cell(config.task, strategy_for(kind, config.strategy), shots, seed)
        for kind in ABLATION_STRATEGIES
        for shots in config.shots_grid
        for seed in config.seeds
    ]
    results = run_cells(config, cells, records)
    table = ablation_table(results, config.strategy.gamma, config.shots_grid)
    write_csv(
        output_dir / f"ablation-{config.task.value}.csv",
        table["rows"],
        ("strategy", *CSV_COLUMNS[4:]),
    )
    _write_json(output_dir / f"ablation-{config.task.value}.json", table)
    return table


def ablation_table(
    records: Sequence[RunRecord],
    gamma: Optional[int] = None,
    shots_grid: Optional[Sequence[int]] = None,
) -> dict[str, Any]:
    """
    戦略ごとに shots を横断して 1 行にする（行はアブレーション表の順）。
    gamma / shots_grid を渡すとその構成の記録だけを使う（γ スイープや他の shots の記録を混ぜない）。
    """
    rows = []
    for kind in ABLATION_STRATEGIES:
        members = [
            r for r in records
            if r.strategy == kind.value
            and (gamma is None or r.gamma == (gamma if kind.is_sparsified else 0))
            and (shots_grid is None or r.shots in shots_grid)
        ]
        if not members:
            continue
        row = summarize(members)
        row["per-shots"] = [summarize(v) for v in _group_by_shots(members)]
        rows.append(row)
    durations = {row["strategy"]: row["iter-duration-mean-s"] for row in rows}
    ratio = None
    if durations.get("dgst") and durations.get("full"):
        ratio = durations["dgst"] / durations["full"]
    return {"rows": rows, "dgst_full_duration_ratio": ratio}


def _group_by_shots(records: Sequence[RunRecord]) -> list[list[RunRecord]]:
    groups: dict[int, list[RunRecord]] = {}
    for r in records:
        groups.setdefault(r.shots, []).append(r)
    return [groups[k] for k in sorted(groups)]


def build_report(
    config: ExperimentConfig,
    records: Optional[BaseRunRecordRepository] = None,
) -> dict[str, Any]:
    """
    保存済みの実行記録だけから表を作り直す（再学習はしない）。
    """
    output_dir = Path(config.output_dir)
    records = records or make_record_repository(output_dir)
    finetunes = records.list(kind="finetune")
    rows = flag_best(aggregate(finetunes))
    write_csv(output_dir / "report.csv", rows)
    pretrains = records.list(kind="pretrain")
    report = {
        "rows": rows,
        "ablation": {
            task: ablation_table(
                [r for r in finetunes if r.task == task], config.strategy.gamma, config.shots_grid
            )
            for task in sorted({r.task for r in finetunes})
        },
        "pretrain": [
            {"run_id": r.run_id, "seed": r.seed, "metrics": r.metrics.to_dict() if r.metrics else None}
            for r in pretrains
        ],
        "generated_at": record_timestamp(),
    }
    _write_json(output_dir / "report.json", report)
    logger.info("[Report] rows=%d finetune_runs=%d pretrain_runs=%d", len(rows), len(finetunes), len(pretrains))
    return report
