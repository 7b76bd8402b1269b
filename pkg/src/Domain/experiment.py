from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from Domain.errors import ConfigError
from Domain.model_config import ModelConfig
from Domain.optim_config import OptimConfig
from Domain.strategy import StrategyConfig, StrategyKind


class TaskKind(str, Enum):
    """
    下流タスク。NEAR はソースと同じ形状族でコントラストだけずらしたもの、
    FAR は形状族も極性も変えたもの。
    """

    NEAR = "near-domain"
    FAR = "far-domain"

    @property
    def default_shots(self) -> tuple[int, ...]:
        return (3, 5, 10) if self is TaskKind.NEAR else (5, 10, 20)


# 表 1 の行（上から順に）と、アブレーション表の行
TABLE_STRATEGIES: tuple[StrategyKind, ...] = (
    StrategyKind.FROM_SCRATCH,
    StrategyKind.FULL,
    StrategyKind.LINEAR_PROB,
    StrategyKind.BIAS,
    StrategyKind.AFFINE_IN,
    StrategyKind.LORA,
    StrategyKind.ADAPTER,
    StrategyKind.BIAS_NORM,
    StrategyKind.ENCODER_ONLY,
    StrategyKind.DECODER_ONLY,
    StrategyKind.DRST,
    StrategyKind.SGST,
    StrategyKind.DGST,
)
ABLATION_STRATEGIES: tuple[StrategyKind, ...] = (
    StrategyKind.FULL,
    StrategyKind.ENCODER_ONLY,
    StrategyKind.DECODER_ONLY,
    StrategyKind.BIAS_NORM,
    StrategyKind.DRST,
    StrategyKind.SGST,
    StrategyKind.DGST,
)


def _sample_std(values: list[float]) -> float:
    # 1 件しかない場合は 0 とする
    if len(values) < 2:
        return 0.0
    return statistics.stdev(values)


@dataclass
class MetricsReport:
    """
    症例ごとの DSC / NSD と、その平均 ± 標準偏差（標本標準偏差）。
    """

    dsc: list[float] = field(default_factory=list)
    nsd: list[float] = field(default_factory=list)

    def add(self, dsc: float, nsd: float) -> None:
        self.dsc.append(float(dsc))
        self.nsd.append(float(nsd))

    def extend(self, other: "MetricsReport") -> None:
        self.dsc.extend(other.dsc)
        self.nsd.extend(other.nsd)

    @property
    def dsc_mean(self) -> float:
        return statistics.fmean(self.dsc) if self.dsc else 0.0

    @property
    def dsc_std(self) -> float:
        return _sample_std(self.dsc)

    @property
    def nsd_mean(self) -> float:
        return statistics.fmean(self.nsd) if self.nsd else 0.0

    @property
    def nsd_std(self) -> float:
        return _sample_std(self.nsd)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dsc": list(self.dsc),
            "nsd": list(self.nsd),
            "dsc_mean": self.dsc_mean,
            "dsc_std": self.dsc_std,
            "nsd_mean": self.nsd_mean,
            "nsd_std": self.nsd_std,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MetricsReport":
        return cls(dsc=list(data.get("dsc", [])), nsd=list(data.get("nsd", [])))


def make_run_id(kind: str, task: str, strategy: str, gamma: int, shots: int, seed: int) -> str:
    """
    実行条件だけから決まる run_id。同じ条件の再実行は同じ id になり、保存時に上書きされる。
    """
    return f"{kind}-{task}-{strategy}-g{gamma}-k{shots}-s{seed}"


@dataclass
class RunRecord:
    """
    1 回の学習（事前学習 or ファインチューニング）の記録。
    JSON にしたときに config / seed から再現できることを前提とする。
    """

    run_id: str
    kind: str
    task: str
    strategy: str
    shots: int
    gamma: int
    seed: int
    config: dict[str, Any]
    loss_curve: list[float] = field(default_factory=list)
    mask_cardinalities: list[int] = field(default_factory=list)
    # 計測時間と時刻は等価比較に含めない
    iteration_mean_s: float = field(default=0.0, compare=False)
    iteration_median_s: float = field(default=0.0, compare=False)
    backward_passes: int = 0
    wall_clock_s: float = field(default=0.0, compare=False)
    metrics: Optional[MetricsReport] = None
    checkpoint_path: Optional[str] = None
    status: str = "ok"
    error: Optional[str] = None
    created_at: Optional[str] = field(default=None, compare=False)

    @property
    def iterations(self) -> int:
        return len(self.loss_curve)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "kind": self.kind,
            "task": self.task,
            "strategy": self.strategy,
            "shots": self.shots,
            "gamma": self.gamma,
            "seed": self.seed,
            "config": self.config,
            "loss_curve": list(self.loss_curve),
            "mask_cardinalities": list(self.mask_cardinalities),
            "iteration_mean_s": self.iteration_mean_s,
            "iteration_median_s": self.iteration_median_s,
            "backward_passes": self.backward_passes,
            "wall_clock_s": self.wall_clock_s,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "checkpoint_path": self.checkpoint_path,
            "status": self.status,
            "error": self.error,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunRecord":
        metrics = data.get("metrics")
        return cls(
            run_id=data["run_id"],
            kind=data["kind"],
            task=data["task"],
            strategy=data["strategy"],
            shots=int(data["shots"]),
            gamma=int(data["gamma"]),
            seed=int(data["seed"]),
            config=data.get("config", {}),
            loss_curve=list(data.get("loss_curve", [])),
            mask_cardinalities=list(data.get("mask_cardinalities", [])),
            iteration_mean_s=float(data.get("iteration_mean_s", 0.0)),
            iteration_median_s=float(data.get("iteration_median_s", 0.0)),
            backward_passes=int(data.get("backward_passes", 0)),
            wall_clock_s=float(data.get("wall_clock_s", 0.0)),
            metrics=MetricsReport.from_dict(metrics) if metrics else None,
            checkpoint_path=data.get("checkpoint_path"),
            status=data.get("status", "ok"),
            error=data.get("error"),
            created_at=data.get("created_at"),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """
    CLI コマンド共通の実験設定。設定ファイル → CLI フラグの順で上書きされる。
    """

    task: TaskKind = TaskKind.FAR
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    shots: int = 5
    shots_grid: tuple[int, ...] = ()
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    split_seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig.finetune_defaults)
    pretrain_optim: OptimConfig = field(default_factory=OptimConfig.pretrain_defaults)
    pretrain_seed: int = 0
    output_dir: Path = Path("runs")
    foundation: Optional[Path] = None
    n_source: int = 200
    n_source_test: int = 50
    n_task: int = 120
    image_size: int = 64
    nsd_tolerance: float = 1.0
    strategies: tuple[StrategyKind, ...] = TABLE_STRATEGIES
    gammas: tuple[int, ...] = (1, 2, 3, 5, 10)
    include_all_shot: bool = True
    augment: bool = True
    timing_exclusive: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if not isinstance(self.task, TaskKind):
            try:
                object.__setattr__(self, "task", TaskKind(self.task))
            except ValueError as e:
                raise ConfigError(f"unknown task {self.task!r}") from e
        if not self.shots_grid:
            object.__setattr__(self, "shots_grid", self.task.default_shots)
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct (got {list(self.seeds)})")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.shots not in self.shots_grid:
            raise ConfigError(
                f"shots={self.shots} is not in the configured grid {list(self.shots_grid)}"
            )
        if any(g < 1 for g in self.gammas):
            raise ConfigError(f"gammas must be >= 1 (got {list(self.gammas)})")
        if self.image_size % self.model.spatial_divisor != 0:
            raise ConfigError(
                f"image_size={self.image_size} is not divisible by 2^depth="
                f"{self.model.spatial_divisor}"
            )
        if self.n_task < 5:
            raise ConfigError(f"n_task must be >= 5 (got {self.n_task})")
        if self.nsd_tolerance < 0:
            raise ConfigError("nsd_tolerance must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task.value,
            "strategy": self.strategy.to_dict(),
            "shots": self.shots,
            "shots_grid": list(self.shots_grid),
            "seeds": list(self.seeds),
            "split_seed": self.split_seed,
            "model": self.model.to_dict(),
            "optim": self.optim.to_dict(),
            "pretrain_optim": self.pretrain_optim.to_dict(),
            "pretrain_seed": self.pretrain_seed,
            "output_dir": str(self.output_dir),
            "foundation": str(self.foundation) if self.foundation else None,
            "n_source": self.n_source,
            "n_source_test": self.n_source_test,
            "n_task": self.n_task,
            "image_size": self.image_size,
            "nsd_tolerance": self.nsd_tolerance,
            "strategies": [s.value for s in self.strategies],
            "gammas": list(self.gammas),
            "include_all_shot": self.include_all_shot,
            "augment": self.augment,
        }
