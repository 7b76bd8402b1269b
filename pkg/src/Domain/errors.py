from __future__ import annotations

from typing import Any


class DgstError(Exception):
    """
    このリポジトリで送出する例外の基底クラス。
    main.py だけが終了コードへの変換を担当する。
    """


class ShapeMismatchError(DgstError, ValueError):
    """
    テンソル形状の不一致。どの演算のどの次元が食い違ったかを保持する。
    """

    def __init__(self, op: str, dimension: str, expected: Any, actual: Any) -> None:
        self.op = op
        self.dimension = dimension
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{op}: shape mismatch on {dimension} (expected={expected}, actual={actual})"
        )


class NonFiniteError(DgstError, ArithmeticError):
    """
    順伝播・逆伝播・更新で NaN / Inf を検出した。
    """

    def __init__(self, op: str, diagnostics: dict[str, Any] | None = None) -> None:
        self.op = op
        self.diagnostics = diagnostics or {}
        detail = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{op}: non-finite value detected ({detail})")


class ConfigError(DgstError, ValueError):
    pass


class CheckpointError(DgstError, ValueError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class DigestMismatchError(CheckpointError):
    pass


class DTypeMismatchError(CheckpointError):
    pass


class SelectionStateError(DgstError, RuntimeError):
    pass


class EmptyDatasetError(DgstError, ValueError):
    pass
