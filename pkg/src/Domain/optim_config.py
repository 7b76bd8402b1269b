from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

from Domain.errors import ConfigError


@dataclass(frozen=True)
class OptimConfig:
    """
    SGD + 多項式減衰の設定。既定値はファインチューニング側
    （lr0=0.001, 50 エポック, バッチ 2, モーメンタムなし）。
    """

    lr0: float = 0.001
    poly_power: float = 0.9
    epochs: int = 50
    batch_size: int = 2
    momentum: float = 0.0

    def __post_init__(self) -> None:
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive (got {self.lr0})")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1 (got {self.epochs})")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1 (got {self.batch_size})")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1) (got {self.momentum})")

    @classmethod
    def pretrain_defaults(cls) -> "OptimConfig":
        return cls(lr0=0.01, epochs=200)

    @classmethod
    def finetune_defaults(cls) -> "OptimConfig":
        return cls()

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OptimConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass
class TrainState:
    """
    学習ループの進行状況。iteration_seconds は 1 反復ごとの実測時間（データ生成を除く）。
    """

    total_iterations: int
    iteration: int = 0
    backward_passes: int = 0
    iteration_seconds: list[float] = field(default_factory=list)

    def advance(self, seconds: float) -> None:
        if self.iteration >= self.total_iterations:
            raise RuntimeError(
                f"iteration counter overflow ({self.iteration} >= {self.total_iterations})"
            )
        self.iteration += 1
        self.iteration_seconds.append(seconds)
