from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np

from Domain.errors import ConfigError
from Domain.parameter import ParameterMeta


class StrategyKind(str, Enum):
    """
    ファインチューニング戦略。値は CLI / 設定ファイルのキーとそのまま一致させる。
    """

    FULL = "full"
    FROM_SCRATCH = "from-scratch"
    LINEAR_PROB = "linear-prob"
    BIAS = "bias"
    BIAS_NORM = "bias-norm"
    AFFINE_IN = "affine-in"
    ENCODER_ONLY = "encoder-only"
    DECODER_ONLY = "decoder-only"
    LORA = "lora"
    ADAPTER = "adapter"
    DRST = "drst"
    SGST = "sgst"
    DGST = "dgst"

    @property
    def is_sparsified(self) -> bool:
        """カーネルごとに γ 個を選ぶ系統（DGST / SGST / DRST）"""
        return self in (StrategyKind.DGST, StrategyKind.SGST, StrategyKind.DRST)

    @property
    def is_structural(self) -> bool:
        return self in (StrategyKind.LORA, StrategyKind.ADAPTER)

    @property
    def needs_foundation(self) -> bool:
        return self is not StrategyKind.FROM_SCRATCH


@dataclass(frozen=True)
class StrategyConfig:
    """
    戦略とそのハイパーパラメータ。kind に関係のない値は無視される。
    sgst_warmup_iters=None は「few-shot セット 1 エポック分」を意味する。
    """

    kind: StrategyKind = StrategyKind.DGST
    gamma: int = 1
    lora_rank: int = 4
    adapter_width: int = 8
    sgst_warmup_iters: Optional[int] = None
    train_bias_norm: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.kind, StrategyKind):
            try:
                object.__setattr__(self, "kind", StrategyKind(self.kind))
            except ValueError as e:
                raise ConfigError(f"unknown strategy {self.kind!r}") from e
        if self.gamma < 1:
            raise ConfigError(f"gamma must be >= 1 (got {self.gamma})")
        if self.lora_rank < 1:
            raise ConfigError(f"lora_rank must be >= 1 (got {self.lora_rank})")
        if self.adapter_width < 1:
            raise ConfigError(f"adapter_width must be >= 1 (got {self.adapter_width})")
        if self.sgst_warmup_iters is not None and self.sgst_warmup_iters < 1:
            raise ConfigError(
                f"sgst_warmup_iters must be >= 1 (got {self.sgst_warmup_iters})"
            )

    @property
    def label(self) -> str:
        if self.kind.is_sparsified:
            return f"{self.kind.value}(gamma={self.gamma})"
        return self.kind.value

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "gamma": self.gamma,
            "lora_rank": self.lora_rank,
            "adapter_width": self.adapter_width,
            "sgst_warmup_iters": self.sgst_warmup_iters,
            "train_bias_norm": self.train_bias_norm,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StrategyConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass
class GradientSnapshot:
    """
    反復 N における全パラメータの勾配 G^N。
    """

    iteration: int
    grads: dict[int, np.ndarray]

    def flat(self, registry: list[ParameterMeta]) -> np.ndarray:
        return np.concatenate([self.grads[m.id].reshape(-1) for m in registry])


@dataclass
class SelectionMask:
    """
    ある反復で更新するスカラーの集合。
    bits はレジストリ全体を 1 本に並べたビット列。
    """

    iteration: int
    bits: np.ndarray

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def for_param(self, meta: ParameterMeta) -> np.ndarray:
        return self.bits[meta.offset : meta.stop].reshape(meta.shape)


@dataclass
class SgstState:
    """
    SGST のウォームアップ状態。|g| を累積し、規定反復に達したらマスクを凍結する。
    """

    accumulated: np.ndarray
    target_iters: int
    iters_done: int = 0
    frozen: Optional[np.ndarray] = field(default=None)

    @property
    def is_frozen(self) -> bool:
        return self.frozen is not None
