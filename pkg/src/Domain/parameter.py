from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from math import prod

import numpy as np


class ParameterRole(str, Enum):
    """
    学習可能パラメータの役割。
    LORA_* / ADAPTER_* は構造的ベースライン注入時にだけ現れる補助パラメータ。
    """

    CONV_WEIGHT = "conv-weight"
    TRANSPOSED_CONV_WEIGHT = "transposed-conv-weight"
    BIAS = "bias"
    NORM_SCALE = "norm-scale"
    NORM_SHIFT = "norm-shift"
    HEAD_WEIGHT = "head-weight"
    HEAD_BIAS = "head-bias"
    LORA_A = "lora-a"
    LORA_B = "lora-b"
    ADAPTER_WEIGHT = "adapter-weight"
    ADAPTER_BIAS = "adapter-bias"

    @property
    def is_kernel_weight(self) -> bool:
        # ヘッドの 1x1 畳み込みもカーネル群に含める
        return self in (
            ParameterRole.CONV_WEIGHT,
            ParameterRole.TRANSPOSED_CONV_WEIGHT,
            ParameterRole.HEAD_WEIGHT,
        )

    @property
    def is_bias(self) -> bool:
        return self in (ParameterRole.BIAS, ParameterRole.HEAD_BIAS)

    @property
    def is_norm(self) -> bool:
        return self in (ParameterRole.NORM_SCALE, ParameterRole.NORM_SHIFT)

    @property
    def is_auxiliary(self) -> bool:
        return self in (
            ParameterRole.LORA_A,
            ParameterRole.LORA_B,
            ParameterRole.ADAPTER_WEIGHT,
            ParameterRole.ADAPTER_BIAS,
        )


class Region(str, Enum):
    ENCODER = "encoder"
    BOTTLENECK = "bottleneck"
    DECODER = "decoder"
    HEAD = "head"


@dataclass(frozen=True)
class ParameterMeta:
    """
    レジストリ 1 エントリ。offset はレジストリ全体を 1 本のベクトルとみなしたときの先頭位置。
    """

    id: int
    name: str
    role: ParameterRole
    region: Region
    shape: tuple[int, ...]
    offset: int
    kernel_group_ids: tuple[int, ...] = field(default=())

    @property
    def numel(self) -> int:
        return prod(self.shape)

    @property
    def stop(self) -> int:
        return self.offset + self.numel

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "role": self.role.value,
            "region": self.region.value,
            "shape": list(self.shape),
        }


@dataclass(frozen=True)
class KernelGroup:
    """
    1 カーネル C_k。indices はレジストリ全体でのスカラー番号（昇順）。
    """

    group_id: int
    param_id: int
    indices: np.ndarray

    @property
    def size(self) -> int:
        return int(self.indices.size)
