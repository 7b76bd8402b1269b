"""
各戦略の更新マスク（反復ごとに更新するスカラーの集合）を組み立てる。

DGST / SGST / DRST はカーネル C_k ごとに γ 個のスカラーを選び、
バイアスと正規化パラメータは常に含める。それ以外の戦略は役割・領域で決まる固定マスク。
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from Domain.data import SegSample
from Domain.errors import EmptyDatasetError, SelectionStateError
from Domain.parameter import ParameterMeta, Region
from Domain.strategy import (
    GradientSnapshot,
    SelectionMask,
    SgstState,
    StrategyConfig,
    StrategyKind,
)
from Network.registry import kernel_index_matrix, role_bits, total_scalars
from Network.unet import Model
from Services.batching import BatchSampler, loss_and_gradients
from Services.synth_data import AugmentConfig

logger = logging.getLogger(__name__)

# DRST の乱数キーに混ぜる定数
DRST_STREAM = 0xD125


@dataclass(frozen=True)
class KernelLayout:
    """
    レジストリから 1 度だけ作る前計算。kernels は (meta, 行=カーネルのスカラー番号行列)。
    """

    kernels: tuple[tuple[ParameterMeta, np.ndarray], ...]
    bias_norm_bits: np.ndarray
    total: int

    @property
    def max_kernel_size(self) -> int:
        return max((rows.shape[1] for _, rows in self.kernels), default=0)


def kernel_layout(registry: Sequence[ParameterMeta]) -> KernelLayout:
    registry = list(registry)
    kernels = tuple((m, kernel_index_matrix(m)) for m in registry if m.kernel_group_ids)
    return KernelLayout(
        kernels=kernels,
        bias_norm_bits=role_bits(registry, lambda m: m.role.is_bias or m.role.is_norm),
        total=total_scalars(registry),
    )


def select_top_gamma(grads: np.ndarray, gamma: int) -> np.ndarray:
    """
    1 カーネル分の勾配から |g| 上位 min(γ, |C_k|) 個の位置を返す（昇順）。
    同値は位置の小さい方を優先する。
    """
    grads = np.asarray(grads).reshape(-1)
    if grads.size == 0:
        raise ValueError("select_top_gamma: empty kernel group")
    order = np.argsort(-np.abs(grads), kind="stable")
    return np.sort(order[: min(gamma, grads.size)])


def _top_gamma_rows(scores: np.ndarray, gamma: int) -> np.ndarray:
    # 行ごとの select_top_gamma（安定ソートで同値は小さい列が先）
    order = np.argsort(-np.abs(scores), axis=1, kind="stable")
    return order[:, : min(gamma, scores.shape[1])]


def _sparse_bits(layout: KernelLayout, scores: np.ndarray, gamma: int) -> np.ndarray:
    bits = layout.bias_norm_bits.copy()
    for _, rows in layout.kernels:
        cols = _top_gamma_rows(scores[rows], gamma)
        bits[np.take_along_axis(rows, cols, axis=1).ravel()] = True
    return bits


def _random_bits(layout: KernelLayout, gamma: int, seed: int, iteration: int) -> np.ndarray:
    """
    DRST: (seed, iteration, kernel id) をキーにしたカウンタ方式の乱数で、各カーネルから γ 個を一様に選ぶ。
    """
    bits = layout.bias_norm_bits.copy()
    for meta, rows in layout.kernels:
        for group_id, row in zip(meta.kernel_group_ids, rows):
            rng = np.random.Generator(
                np.random.Philox(counter=[iteration, group_id, 0, 0], key=[seed, DRST_STREAM])
            )
            keys = rng.random(row.size)
            picked = np.argsort(keys, kind="stable")[: min(gamma, row.size)]
            bits[row[picked]] = True
    return bits


def static_bits(
    kind: StrategyKind,
    registry: Sequence[ParameterMeta],
    bottleneck_as_encoder: bool = True,
    train_bias_norm: bool = False,
) -> np.ndarray:
    """
    勾配に依存しない戦略の固定マスク。
    """
    registry = list(registry)

    def encoder_side(m: ParameterMeta) -> bool:
        return m.region is Region.ENCODER or (m.region is Region.BOTTLENECK and bottleneck_as_encoder)

    def decoder_side(m: ParameterMeta) -> bool:
        return m.region is Region.DECODER or (m.region is Region.BOTTLENECK and not bottleneck_as_encoder)

    if kind in (StrategyKind.FULL, StrategyKind.FROM_SCRATCH):
        return np.ones(total_scalars(registry), dtype=bool)
    if kind is StrategyKind.LINEAR_PROB:
        return role_bits(registry, lambda m: m.region is Region.HEAD and not m.role.is_auxiliary)
    if kind is StrategyKind.BIAS:
        return role_bits(registry, lambda m: m.role.is_bias)
    if kind is StrategyKind.AFFINE_IN:
        return role_bits(registry, lambda m: m.role.is_norm)
    if kind is StrategyKind.BIAS_NORM:
        return role_bits(registry, lambda m: m.role.is_bias or m.role.is_norm)
    if kind is StrategyKind.ENCODER_ONLY:
        return role_bits(registry, lambda m: encoder_side(m) and not m.role.is_auxiliary)
    if kind is StrategyKind.DECODER_ONLY:
        return role_bits(registry, lambda m: decoder_side(m) and not m.role.is_auxiliary)
    if kind.is_structural:
        return role_bits(
            registry,
            lambda m: m.role.is_auxiliary or (train_bias_norm and (m.role.is_bias or m.role.is_norm)),
        )
    raise ValueError(f"{kind.value} has no static mask")


def build_selection(
    strategy: StrategyConfig,
    registry: Sequence[ParameterMeta],
    snapshot: Optional[GradientSnapshot],
    seed: int,
    sgst_state: Optional[SgstState] = None,
    layout: Optional[KernelLayout] = None,
    iteration: Optional[int] = None,
    bottleneck_as_encoder: bool = True,
) -> SelectionMask:
    """
    反復 N の更新マスクを返す。

    - dgst: snapshot の |g| から毎回選び直す
    - drst: (seed, N, kernel) の乱数で毎回選び直す
    - sgst: ウォームアップで凍結したマスクをそのまま返す
    """
    kind = strategy.kind
    if iteration is None:
        iteration = snapshot.iteration if snapshot is not None else 0

    if not kind.is_sparsified:
        bits = static_bits(kind, registry, bottleneck_as_encoder, strategy.train_bias_norm)
        return SelectionMask(iteration=iteration, bits=bits)

    layout = layout or kernel_layout(registry)
    if kind is StrategyKind.DGST:
        if snapshot is None:
            raise ValueError("dgst requires a gradient snapshot")
        bits = _sparse_bits(layout, snapshot.flat(list(registry)), strategy.gamma)
    elif kind is StrategyKind.DRST:
        bits = _random_bits(layout, strategy.gamma, seed, iteration)
    else:
        if sgst_state is None or not sgst_state.is_frozen:
            raise SelectionStateError("sgst mask requested before warmup completed")
        bits = sgst_state.frozen.copy()
    return SelectionMask(iteration=iteration, bits=bits)


# ---------------------------------------------------------------------------
# SGST
# ---------------------------------------------------------------------------


def new_sgst_state(registry: Sequence[ParameterMeta], target_iters: int) -> SgstState:
    if target_iters < 1:
        raise ValueError(f"sgst warmup needs at least one iteration (got {target_iters})")
    return SgstState(accumulated=np.zeros(total_scalars(registry)), target_iters=target_iters)


def accumulate_sgst(
    state: SgstState,
    snapshot: GradientSnapshot,
    registry: Sequence[ParameterMeta],
    layout: KernelLayout,
    gamma: int,
) -> SgstState:
    """
    |g| を足し込み、規定回数に達したら上位 γ（＋バイアス・正規化）でマスクを凍結する。
    """
    if state.is_frozen:
        return state
    state.accumulated += np.abs(snapshot.flat(list(registry)))
    state.iters_done += 1
    if state.iters_done >= state.target_iters:
        state.frozen = _sparse_bits(layout, state.accumulated, gamma)
        logger.info(
            "[SGST] mask frozen after %d iters (selected=%d)",
            state.iters_done, int(state.frozen.sum()),
        )
    return state


def sgst_warmup(
    model: Model,
    dataset: Sequence[SegSample],
    warmup_iters: int,
    seed: int,
    gamma: int = 1,
    batch_size: int = 2,
    augment_config: Optional[AugmentConfig] = None,
) -> SgstState:
    """
    事前学習済みの重みのまま warmup_iters 回ぶんの |g| を累積してマスクを凍結する。
    パラメータは一切更新しない。バッチ列は本学習と同じ (seed, iteration) から作る。
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("sgst_warmup: empty dataset")
    sampler = BatchSampler(dataset, batch_size, seed, augment_config)
    layout = kernel_layout(model.registry)
    state = new_sgst_state(model.registry, warmup_iters)
    for iteration in range(warmup_iters):
        images, labels = sampler.batch(iteration)
        _, snapshot, _ = loss_and_gradients(model, images, labels, iteration)
        accumulate_sgst(state, snapshot, model.registry, layout, gamma)
    return state


def strategy_param_count(
    strategy: StrategyConfig,
    registry: Sequence[ParameterMeta],
    bottleneck_as_encoder: bool = True,
) -> int:
    """
    1 反復で更新されるスカラー数。LoRA / Adapter は補助パラメータの数。
    """
    registry = list(registry)
    if strategy.kind.is_sparsified:
        layout = kernel_layout(registry)
        selected = sum(rows.shape[0] * min(strategy.gamma, rows.shape[1]) for _, rows in layout.kernels)
        return selected + int(layout.bias_norm_bits.sum())
    return int(static_bits(strategy.kind, registry, bottleneck_as_encoder, strategy.train_bias_norm).sum())
