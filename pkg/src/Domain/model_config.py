from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any

from Domain.errors import ConfigError


class KernelGranularity(str, Enum):
    """
    カーネル群 C_k の切り方。

    - FILTER: 畳み込み層の出力チャネル 1 本ぶんのフィルタを 1 カーネルとする
    - LAYER : 重みテンソル全体を 1 カーネルとする（感度分析用）
    """

    FILTER = "filter"
    LAYER = "layer"


@dataclass(frozen=True)
class ModelConfig:
    """
    2D U-Net の構成。depth はエンコーダ段数（ボトルネックは別に 1 段）。
    """

    in_channels: int = 1
    num_classes: int = 2
    base_width: int = 8
    depth: int = 3
    instance_norm: bool = True
    dtype: str = "float64"
    kernel_granularity: KernelGranularity = KernelGranularity.FILTER
    bottleneck_as_encoder: bool = True

    def __post_init__(self) -> None:
        if self.depth < 2:
            raise ConfigError(f"depth must be >= 2 (got {self.depth})")
        if self.base_width < 2:
            raise ConfigError(f"base_width must be >= 2 (got {self.base_width})")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2 (got {self.num_classes})")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1 (got {self.in_channels})")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64 (got {self.dtype!r})")
        if not isinstance(self.kernel_granularity, KernelGranularity):
            try:
                object.__setattr__(
                    self, "kernel_granularity", KernelGranularity(self.kernel_granularity)
                )
            except ValueError as e:
                raise ConfigError(str(e)) from e

    @property
    def spatial_divisor(self) -> int:
        return 2**self.depth

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["kernel_granularity"] = self.kernel_granularity.value
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)
