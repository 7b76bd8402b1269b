from __future__ import annotations

from typing import TYPE_CHECKING, Any, Optional

import numpy as np

if TYPE_CHECKING:
    from Autodiff.tape import GradientTape


def resolve_dtype(name: str) -> np.dtype:
    """
    "float32" / "float64" を numpy dtype にする。勾配チェックは常に float64 で行う。
    """
    if name not in ("float32", "float64"):
        raise ValueError(f"unsupported dtype {name!r}")
    return np.dtype(name)


class Tensor:
    """
    密な N 次元実数配列。

    - data    : 行優先で連続な numpy 配列（形状 = shape）
    - tape    : 記録先の GradientTape（定数なら None）
    - node_id : tape 上のノード番号（定数なら None）
    - param_id: パラメータ葉ノードのときだけ設定される
    """

    __slots__ = ("data", "tape", "node_id", "param_id")

    def __init__(
        self,
        data: Any,
        tape: Optional["GradientTape"] = None,
        node_id: Optional[int] = None,
        param_id: Optional[int] = None,
    ) -> None:
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.tape = tape
        self.node_id = node_id
        self.param_id = param_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def tracked(self) -> bool:
        return self.tape is not None and self.node_id is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, node={self.node_id})"

    # 演算子は functional に委譲する
    def __add__(self, other: Any) -> "Tensor":
        from Autodiff import functional as F

        return F.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from Autodiff import functional as F

        return F.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        from Autodiff import functional as F

        return F.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from Autodiff import functional as F

        return F.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from Autodiff import functional as F

        return F.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from Autodiff import functional as F

        return F.mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        from Autodiff import functional as F

        return F.div(self, other)

    def __neg__(self) -> "Tensor":
        from Autodiff import functional as F

        return F.mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from Autodiff import functional as F

        return F.matmul(self, other)


def as_tensor(value: Any, dtype: Optional[np.dtype] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else np.float64))
