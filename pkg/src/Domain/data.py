from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from Domain.errors import ConfigError


class ShapeFamily(str, Enum):
    ELLIPSE = "ellipse"
    LOBULATED = "lobulated"
    RING = "ring"


@dataclass(frozen=True)
class DomainSpec:
    """
    合成ドメインの定義。

    - polarity=+1: 前景が背景より明るい（ソース側）
    - polarity=-1: 生成後に 1 - image で反転する（遠いドメイン）
    """

    name: str
    image_size: int = 64
    blob_count: tuple[int, int] = (1, 3)
    shape_family: ShapeFamily = ShapeFamily.ELLIPSE
    radius_range: tuple[float, float] = (4.0, 9.0)
    fg_mean: float = 0.75
    fg_std: float = 0.05
    bg_mean: float = 0.30
    bg_std: float = 0.05
    texture_amplitude: float = 0.05
    polarity: int = 1

    def __post_init__(self) -> None:
        lo, hi = self.blob_count
        if lo < 1 or hi < lo:
            raise ConfigError(f"{self.name}: degenerate blob_count range {self.blob_count}")
        if self.radius_range[0] <= 0 or self.radius_range[1] < self.radius_range[0]:
            raise ConfigError(f"{self.name}: degenerate radius_range {self.radius_range}")
        if self.polarity not in (1, -1):
            raise ConfigError(f"{self.name}: polarity must be +1 or -1")
        if self.image_size < 2 * self.radius_range[1] + 4:
            raise ConfigError(f"{self.name}: image_size too small for radius_range")
        if not isinstance(self.shape_family, ShapeFamily):
            object.__setattr__(self, "shape_family", ShapeFamily(self.shape_family))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["shape_family"] = self.shape_family.value
        d["blob_count"] = list(self.blob_count)
        d["radius_range"] = list(self.radius_range)
        return d


@dataclass
class SegSample:
    """
    image: (1, H, W) 実数 [0, 1]、label: (H, W) の整数クラス ID。
    """

    image: np.ndarray
    label: np.ndarray

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.label.ndim != 2:
            raise ValueError(
                f"SegSample expects image (1,H,W) and label (H,W), got "
                f"{self.image.shape} / {self.label.shape}"
            )
        if self.image.shape[1:] != self.label.shape:
            raise ValueError(
                f"image/label spatial mismatch {self.image.shape[1:]} vs {self.label.shape}"
            )


@dataclass
class Dataset:
    domain: str
    seed: int
    samples: list[SegSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, idx: int) -> SegSample:
        return self.samples[idx]

    def subset(self, indices: list[int]) -> "Dataset":
        return Dataset(self.domain, self.seed, [self.samples[i] for i in indices])
