"""
マスク付き SGD と学習ループ（事前学習 / ファインチューニング）。

1 反復 = バッチ取得 → 順伝播 → CE+Dice → 逆伝播（1 回だけ）→ マスク作成 → マスク付き更新。
反復時間はバッチ取得（データ生成・拡張）を除いた部分だけを測る。
"""
from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from Domain.data import SegSample
from Domain.errors import EmptyDatasetError, NonFiniteError
from Domain.experiment import RunRecord, make_run_id
from Domain.model_config import ModelConfig
from Domain.optim_config import OptimConfig, TrainState
from Domain.parameter import ParameterMeta
from Domain.strategy import (
    GradientSnapshot,
    SelectionMask,
    SgstState,
    StrategyConfig,
    StrategyKind,
)
from Network.unet import Model, build_unet
from Services.batching import BatchSampler, loss_and_gradients
from Services.sparsify import (
    build_selection,
    kernel_layout,
    sgst_warmup,
)
from Services.structural import adapter_inject, lora_inject
from Services.synth_data import AugmentConfig
from time_utils import Stopwatch, record_timestamp

logger = logging.getLogger(__name__)

StepCallback = Callable[[int, Model, SelectionMask], None]


def poly_lr(lr0: float, iteration: int, total: int, power: float = 0.9) -> float:
    """
    lr0 · (1 - N/T)^power
    """
    if total <= 0:
        raise ValueError(f"poly_lr: total iterations must be positive (got {total})")
    if not 0 <= iteration <= total:
        raise ValueError(f"poly_lr: iteration {iteration} outside [0, {total}]")
    return lr0 * (1.0 - iteration / total) ** power


def masked_step(
    params: dict[int, np.ndarray],
    snapshot: GradientSnapshot,
    mask: SelectionMask,
    lr: float,
    registry: Sequence[ParameterMeta],
    momentum: float = 0.0,
    buffers: Optional[dict[int, np.ndarray]] = None,
) -> int:
    """
    選択されたスカラーだけ θ ← θ - lr·g で上書きする。非選択スカラーには一切書き込まない。
    全選択のマスクなら通常の SGD とビット単位で一致する。戻り値は更新したスカラー数。

    momentum > 0 のとき、バッファも選択された位置だけ v ← μv + g で更新する。
    """
    updated = 0
    for meta in registry:
        selected = mask.for_param(meta)
        if not selected.any():
            continue
        grad = snapshot.grads[meta.id]
        if not np.isfinite(grad[selected]).all():
            raise NonFiniteError(
                "masked_step",
                {"param": meta.name, "iteration": snapshot.iteration},
            )
        step = grad
        if momentum > 0.0:
            if buffers is None:
                raise ValueError("masked_step: momentum requires a buffer dict")
            buf = buffers.setdefault(meta.id, np.zeros_like(params[meta.id]))
            np.add(buf * momentum, grad, out=buf, where=selected)
            step = buf
        target = params[meta.id]
        np.subtract(target, lr * step, out=target, where=selected)
        updated += int(np.count_nonzero(selected))
    return updated


def prepare_model(
    foundation: Optional[Model],
    strategy: StrategyConfig,
    seed: int,
    model_config: Optional[ModelConfig] = None,
) -> Model:
    """
    戦略に応じて学習開始時のモデルを用意する。foundation 自体は変更しない。

    - from-scratch: foundation を無視して seed から初期化
    - lora / adapter: foundation のコピーに補助パラメータを注入
    - それ以外: foundation のコピー
    """
    if strategy.kind is StrategyKind.FROM_SCRATCH:
        config = model_config or (foundation.config if foundation is not None else None)
        if config is None:
            raise ValueError("from-scratch needs a model config")
        return build_unet(config, seed)
    if foundation is None:
        raise ValueError(f"{strategy.kind.value} requires a foundation model")
    if strategy.kind is StrategyKind.LORA and not foundation.lora:
        return lora_inject(foundation, strategy.lora_rank, seed)
    if strategy.kind is StrategyKind.ADAPTER and not foundation.adapters:
        return adapter_inject(foundation, strategy.adapter_width, seed)
    return foundation.clone()


def train_loop(
    model: Model,
    strategy: StrategyConfig,
    samples: Sequence[SegSample],
    optim: OptimConfig,
    seed: int,
    *,
    augment_config: Optional[AugmentConfig] = None,
    sgst_state: Optional[SgstState] = None,
    on_step: Optional[StepCallback] = None,
    log_prefix: str = "Trainer",
) -> tuple[Model, TrainState, list[float], list[int]]:
    """
    model をその場で学習する。戻り値は (model, 進行状況, 損失列, マスク基数列)。
    """
    if len(samples) == 0:
        raise EmptyDatasetError("training set is empty")
    sampler = BatchSampler(samples, optim.batch_size, seed, augment_config)
    total = optim.epochs * sampler.iterations_per_epoch
    state = TrainState(total_iterations=total)
    layout = kernel_layout(model.registry)
    bottleneck_as_encoder = model.config.bottleneck_as_encoder

    if strategy.kind is StrategyKind.SGST and sgst_state is None:
        # 既定のウォームアップは few-shot セット 1 エポック分
        iters = strategy.sgst_warmup_iters or sampler.iterations_per_epoch
        sgst_state = sgst_warmup(
            model, samples, iters, seed, strategy.gamma, optim.batch_size, augment_config,
        )

    static_mask: Optional[SelectionMask] = None
    if not strategy.kind.is_sparsified:
        static_mask = build_selection(
            strategy, model.registry, None, seed,
            bottleneck_as_encoder=bottleneck_as_encoder,
        )

    buffers: dict[int, np.ndarray] = {}
    losses: list[float] = []
    cardinalities: list[int] = []
    stopwatch = Stopwatch()
    log_every = max(1, sampler.iterations_per_epoch * max(1, optim.epochs // 10))

    for iteration in range(total):
        images, labels = sampler.batch(iteration)
        with stopwatch.lap():
            loss, snapshot, tape = loss_and_gradients(model, images, labels, iteration)
            if static_mask is not None:
                mask = SelectionMask(iteration=iteration, bits=static_mask.bits)
            else:
                mask = build_selection(
                    strategy, model.registry, snapshot, seed, sgst_state,
                    layout=layout, iteration=iteration,
                    bottleneck_as_encoder=bottleneck_as_encoder,
                )
            lr = poly_lr(optim.lr0, iteration, total, optim.poly_power)
            masked_step(model.params, snapshot, mask, lr, model.registry, optim.momentum, buffers)
        state.backward_passes += tape.backward_count
        state.advance(stopwatch.laps[-1])
        losses.append(loss)
        cardinalities.append(mask.count)
        if on_step is not None:
            on_step(iteration, model, mask)
        if (iteration + 1) % log_every == 0 or iteration + 1 == total:
            logger.info(
                "[%s] iter=%d/%d loss=%.4f lr=%.3e selected=%d",
                log_prefix, iteration + 1, total, loss, lr, mask.count,
            )
    return model, state, losses, cardinalities


def _record(
    kind: str,
    task: str,
    strategy: StrategyConfig,
    shots: int,
    seed: int,
    config: dict,
    state: TrainState,
    losses: list[float],
    cardinalities: list[int],
    wall_clock: float,
) -> RunRecord:
    seconds = state.iteration_seconds
    gamma = strategy.gamma if strategy.kind.is_sparsified else 0
    return RunRecord(
        run_id=make_run_id(kind, task, strategy.kind.value, gamma, shots, seed),
        kind=kind,
        task=task,
        strategy=strategy.kind.value,
        shots=shots,
        gamma=gamma,
        seed=seed,
        config=config,
        loss_curve=losses,
        mask_cardinalities=cardinalities,
        iteration_mean_s=float(np.mean(seconds)) if seconds else 0.0,
        iteration_median_s=float(np.median(seconds)) if seconds else 0.0,
        backward_passes=state.backward_passes,
        wall_clock_s=wall_clock,
        created_at=record_timestamp(),
    )


def finetune_loop(
    foundation: Optional[Model],
    strategy: StrategyConfig,
    samples: Sequence[SegSample],
    optim: OptimConfig,
    seed: int,
    *,
    model_config: Optional[ModelConfig] = None,
    augment_config: Optional[AugmentConfig] = None,
    task: str = "",
    on_step: Optional[StepCallback] = None,
) -> tuple[Model, RunRecord]:
    """
    few-shot セットで 1 回ファインチューニングする。foundation は書き換えない。
    """
    if len(samples) == 0:
        raise EmptyDatasetError("few-shot set is empty")
    stopwatch = Stopwatch()
    model = prepare_model(foundation, strategy, seed, model_config)
    logger.info(
        "[Finetune] start strategy=%s shots=%d seed=%d scalars=%d",
        strategy.label, len(samples), seed, model.num_scalars,
    )
    model, state, losses, cards = train_loop(
        model, strategy, samples, optim, seed,
        augment_config=augment_config, on_step=on_step, log_prefix="Finetune",
    )
    record = _record(
        "finetune", task, strategy, len(samples), seed,
        {"strategy": strategy.to_dict(), "optim": optim.to_dict(), "model": model.config.to_dict()},
        state, losses, cards, stopwatch.total,
    )
    return model, record


def pretrain_loop(
    model_config: ModelConfig,
    samples: Sequence[SegSample],
    optim: OptimConfig,
    seed: int,
    *,
    augment_config: Optional[AugmentConfig] = None,
) -> tuple[Model, RunRecord]:
    """
    ソースドメインで全パラメータを乱数初期化から学習し、基盤モデルを作る。
    """
    stopwatch = Stopwatch()
    strategy = StrategyConfig(kind=StrategyKind.FULL)
    model = build_unet(model_config, seed)
    logger.info("[Pretrain] start samples=%d epochs=%d seed=%d", len(samples), optim.epochs, seed)
    model, state, losses, cards = train_loop(
        model, strategy, samples, optim, seed,
        augment_config=augment_config, log_prefix="Pretrain",
    )
    model.provenance = {**model.provenance, "kind": "foundation", "seed": seed}
    record = _record(
        "pretrain", "source", strategy, len(samples), seed,
        {"optim": optim.to_dict(), "model": model_config.to_dict()},
        state, losses, cards, stopwatch.total,
    )
    return model, record
