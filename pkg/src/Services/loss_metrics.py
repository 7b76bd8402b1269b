from __future__ import annotations

from typing import Iterable

import numpy as np
from scipy import ndimage

from Autodiff import functional as F
from Autodiff.tensor import Tensor
from Domain.data import SegSample
from Domain.errors import ShapeMismatchError
from Domain.experiment import MetricsReport
from Network.unet import Model, predict

DICE_SMOOTH = 1e-5
NSD_TOLERANCE_PX = 1.0

# 4 近傍
_CROSS = ndimage.generate_binary_structure(2, 1)


def _one_hot(logits: Tensor, labels: np.ndarray) -> np.ndarray:
    n, c, h, w = logits.shape
    if c < 2:
        raise ShapeMismatchError("ce_dice_loss", "C", ">= 2", c)
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ShapeMismatchError("ce_dice_loss", "labels", (n, h, w), labels.shape)
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"ce_dice_loss: label out of range [0, {c}) (min={labels.min()}, max={labels.max()})")
    return np.eye(c, dtype=logits.dtype)[labels].transpose(0, 3, 1, 2)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """
    画素平均のクロスエントロピー。
    """
    onehot = _one_hot(logits, labels)
    n, _, h, w = logits.shape
    logp = F.log_softmax(logits, axis=1)
    return F.mul(F.reduce_sum(F.mul(logp, onehot)), -1.0 / (n * h * w))


def soft_dice_loss(logits: Tensor, labels: np.ndarray, smooth: float = DICE_SMOOTH) -> Tensor:
    """
    前景クラスだけのソフト Dice 損失。サンプル×クラスごとに Dice を取り、その平均を 1 から引く。
    """
    onehot = _one_hot(logits, labels)
    probs = F.slice_channels(F.softmax(logits, axis=1), 1)
    target = onehot[:, 1:]
    intersection = F.reduce_sum(F.mul(probs, target), axis=(2, 3))
    denom = F.add(F.reduce_sum(probs, axis=(2, 3)), target.sum(axis=(2, 3)))
    dice = F.div(F.add(F.mul(intersection, 2.0), smooth), F.add(denom, smooth))
    return F.sub(1.0, F.mean(dice))


def ce_dice_loss(logits: Tensor, labels: np.ndarray, smooth: float = DICE_SMOOTH) -> Tensor:
    """
    L = CE + Dice（等重み）。logits が tape 上にあればそのまま同じ tape に記録される。
    """
    return F.add(cross_entropy(logits, labels), soft_dice_loss(logits, labels, smooth))


# ---------------------------------------------------------------------------
# 評価指標
# ---------------------------------------------------------------------------


def _check_masks(op: str, pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(op, "mask", gt.shape, pred.shape)
    return pred, gt


def dsc(pred: np.ndarray, gt: np.ndarray) -> float:
    """
    2|A∩B| / (|A|+|B|)。両方空なら 1.0。
    """
    pred, gt = _check_masks("dsc", pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """
    4 近傍に背景（または画像外）を持つ前景画素。
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    eroded = ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)
    return mask & ~eroded


def nsd(pred: np.ndarray, gt: np.ndarray, tol: float = NSD_TOLERANCE_PX) -> float:
    """
    Normalized Surface Dice（許容誤差は画素単位）。
    両方空なら 1.0、片方だけ空なら 0.0。
    """
    pred, gt = _check_masks("nsd", pred, gt)
    if tol < 0:
        raise ValueError(f"nsd: tolerance must be non-negative (got {tol})")
    has_pred, has_gt = pred.any(), gt.any()
    if not has_pred and not has_gt:
        return 1.0
    if not has_pred or not has_gt:
        return 0.0

    border_pred = boundary(pred)
    border_gt = boundary(gt)
    # 相手側境界までのユークリッド距離（画素中心間）
    dist_to_gt = ndimage.distance_transform_edt(~border_gt)
    dist_to_pred = ndimage.distance_transform_edt(~border_pred)
    hit_pred = int((dist_to_gt[border_pred] <= tol).sum())
    hit_gt = int((dist_to_pred[border_gt] <= tol).sum())
    return (hit_pred + hit_gt) / (int(border_pred.sum()) + int(border_gt.sum()))


def evaluate_case(
    model: Model,
    sample: SegSample,
    tol: float = NSD_TOLERANCE_PX,
    foreground: int = 1,
) -> tuple[float, float]:
    pred = predict(model, sample.image[None])[0] == foreground
    gt = sample.label == foreground
    return dsc(pred, gt), nsd(pred, gt, tol)


def evaluate_dataset(
    model: Model,
    samples: Iterable[SegSample],
    tol: float = NSD_TOLERANCE_PX,
) -> MetricsReport:
    report = MetricsReport()
    for sample in samples:
        report.add(*evaluate_case(model, sample, tol))
    return report
