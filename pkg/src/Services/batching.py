from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from Autodiff.tape import GradientTape, backward
from Domain.data import SegSample
from Domain.errors import EmptyDatasetError
from Domain.strategy import GradientSnapshot
from Network.unet import Model, forward
from Services.loss_metrics import ce_dice_loss
from Services.synth_data import AugmentConfig, augment

# 乱数ストリームの識別子（seed と組にして SeedSequence に渡す）
STREAM_ORDER = 11
STREAM_AUGMENT = 12


class BatchSampler:
    """
    反復番号 → ミニバッチ を決定的に返すサンプラー。

    - エポックごとの並び順は (seed, epoch) だけで決まる
    - 拡張の乱数は (seed, iteration, バッチ内位置) ごとに独立に払い出す
    そのため同じ seed なら SGST のウォームアップと本学習の反復 0 は同じバッチになる。
    """

    def __init__(
        self,
        samples: Sequence[SegSample],
        batch_size: int,
        seed: int,
        augment_config: AugmentConfig | None = None,
    ) -> None:
        if len(samples) == 0:
            raise EmptyDatasetError("BatchSampler: no training samples")
        self.samples = list(samples)
        self.batch_size = batch_size
        self.seed = seed
        self.augment_config = augment_config or AugmentConfig()
        self.iterations_per_epoch = math.ceil(len(self.samples) / batch_size)
        self._orders: dict[int, np.ndarray] = {}

    def order(self, epoch: int) -> np.ndarray:
        if epoch not in self._orders:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, STREAM_ORDER, epoch]))
            self._orders = {epoch: rng.permutation(len(self.samples))}
        return self._orders[epoch]

    def batch(self, iteration: int) -> tuple[np.ndarray, np.ndarray]:
        epoch, position = divmod(iteration, self.iterations_per_epoch)
        picked = self.order(epoch)[position * self.batch_size : (position + 1) * self.batch_size]
        images, labels = [], []
        for slot, index in enumerate(picked):
            sample = self.samples[int(index)]
            if self.augment_config.enabled:
                rng = np.random.default_rng(
                    np.random.SeedSequence([self.seed, STREAM_AUGMENT, iteration, slot])
                )
                sample = augment(sample, rng, self.augment_config)
            images.append(sample.image)
            labels.append(sample.label)
        return np.stack(images), np.stack(labels)


def loss_and_gradients(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    iteration: int,
) -> tuple[float, GradientSnapshot, GradientTape]:
    """
    順伝播 → CE+Dice → 逆伝播 を 1 回だけ行い、勾配スナップショット G^N を返す。
    """
    tape = GradientTape()
    logits = forward(model, images.astype(model.dtype, copy=False), tape)
    loss = ce_dice_loss(logits, labels)
    grads = backward(tape, loss)
    return float(loss.data), GradientSnapshot(iteration=iteration, grads=grads), tape
