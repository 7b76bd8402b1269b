from __future__ import annotations

import hashlib
import json
from typing import Callable, Iterable

import numpy as np

from Domain.parameter import KernelGroup, ParameterMeta, ParameterRole


def total_scalars(registry: Iterable[ParameterMeta]) -> int:
    return sum(m.numel for m in registry)


def kernel_index_matrix(meta: ParameterMeta) -> np.ndarray:
    """
    カーネル重み 1 本をカーネル群ごとの行に並べ替えた、全体スカラー番号の行列
    （行 = カーネル、列 = カーネル内の位置、各行は昇順）。

    - conv / head   : (Cout, Cin*kh*kw)
    - transposed    : (Cout, Cin*kh*kw)  重み (Cin, Cout, kh, kw) の出力チャネル軸で切る
    - 層単位の場合  : (1, numel)
    """
    local = np.arange(meta.numel, dtype=np.int64).reshape(meta.shape)
    if len(meta.kernel_group_ids) == 1:
        return local.reshape(1, -1) + meta.offset
    if meta.role is ParameterRole.TRANSPOSED_CONV_WEIGHT:
        local = local.transpose(1, 0, 2, 3)
    return local.reshape(local.shape[0], -1) + meta.offset


def partition_kernels(registry: Iterable[ParameterMeta]) -> list[KernelGroup]:
    """
    畳み込み・転置畳み込みの重みスカラーを互いに素なカーネル群 {C_k} に分割する。
    """
    groups: list[KernelGroup] = []
    for meta in registry:
        if not meta.kernel_group_ids:
            continue
        rows = kernel_index_matrix(meta)
        for group_id, row in zip(meta.kernel_group_ids, rows):
            groups.append(KernelGroup(group_id=group_id, param_id=meta.id, indices=row))
    return groups


def role_bits(
    registry: list[ParameterMeta],
    predicate: Callable[[ParameterMeta], bool],
) -> np.ndarray:
    """
    predicate を満たすパラメータのスカラーだけ True にしたビット列。
    """
    bits = np.zeros(total_scalars(registry), dtype=bool)
    for meta in registry:
        if predicate(meta):
            bits[meta.offset : meta.stop] = True
    return bits


def registry_digest(registry: Iterable[ParameterMeta]) -> str:
    payload = json.dumps([m.to_dict() for m in registry], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
