"""
合成セグメンテーションデータの生成・few-shot 分割・データ拡張。

ソース（事前学習用）、近いドメイン、遠いドメインの 3 種類の DomainSpec を持つ。
生成も拡張もすべて seed だけで決まる。
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from Domain.data import Dataset, DomainSpec, SegSample, ShapeFamily
from Domain.errors import ConfigError, EmptyDatasetError
from Domain.experiment import TaskKind

logger = logging.getLogger(__name__)

TEST_FRACTION = 0.2
STREAM_SPLIT = 21
STREAM_SHOTS = 22

# 基準サイズ 64px での既定ドメイン
SOURCE_DOMAIN = DomainSpec(name="source")
NEAR_DOMAIN = DomainSpec(
    name="near-domain",
    fg_mean=0.62,
    fg_std=0.07,
    bg_mean=0.38,
    bg_std=0.07,
    texture_amplitude=0.10,
)
FAR_DOMAIN = DomainSpec(
    name="far-domain",
    blob_count=(1, 2),
    shape_family=ShapeFamily.LOBULATED,
    radius_range=(5.0, 10.0),
    fg_mean=0.70,
    fg_std=0.06,
    bg_mean=0.40,
    bg_std=0.06,
    texture_amplitude=0.08,
    polarity=-1,
)

_REFERENCE_SIZE = 64


def scaled_domain(spec: DomainSpec, image_size: int) -> DomainSpec:
    """
    画像サイズを変えた DomainSpec を返す。半径は 64px 基準で比例縮小する。
    """
    if image_size == spec.image_size:
        return spec
    ratio = image_size / _REFERENCE_SIZE
    lo, hi = spec.radius_range
    return replace(spec, image_size=image_size, radius_range=(max(1.5, lo * ratio), max(2.0, hi * ratio)))


def task_domain(task: TaskKind, image_size: int = 64) -> DomainSpec:
    spec = NEAR_DOMAIN if task is TaskKind.NEAR else FAR_DOMAIN
    return scaled_domain(spec, image_size)


def source_domain(image_size: int = 64) -> DomainSpec:
    return scaled_domain(SOURCE_DOMAIN, image_size)


# ---------------------------------------------------------------------------
# 生成
# ---------------------------------------------------------------------------


def _blob_mask(
    spec: DomainSpec,
    rng: np.random.Generator,
    yy: np.ndarray,
    xx: np.ndarray,
) -> np.ndarray:
    size = spec.image_size
    r_lo, r_hi = spec.radius_range
    radius = rng.uniform(r_lo, r_hi)
    margin = r_hi + 1.0
    cy = rng.uniform(margin, size - 1 - margin)
    cx = rng.uniform(margin, size - 1 - margin)
    angle = rng.uniform(0.0, math.pi)
    aspect = rng.uniform(0.6, 1.0)

    dy, dx = yy - cy, xx - cx
    u = dx * math.cos(angle) + dy * math.sin(angle)
    v = -dx * math.sin(angle) + dy * math.cos(angle)

    if spec.shape_family is ShapeFamily.ELLIPSE:
        return (u / radius) ** 2 + (v / (radius * aspect)) ** 2 <= 1.0

    theta = np.arctan2(v, u)
    dist = np.hypot(u, v)
    if spec.shape_family is ShapeFamily.LOBULATED:
        lobes = int(rng.integers(3, 6))
        phase = rng.uniform(0.0, 2 * math.pi)
        depth = rng.uniform(0.15, 0.3)
        return dist <= radius * (1.0 + depth * np.cos(lobes * theta + phase)) / (1.0 + depth)

    # ring: 外周と内周の間
    inner = radius * rng.uniform(0.4, 0.6)
    return (dist <= radius) & (dist >= inner)


def _render(spec: DomainSpec, label: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    shape = label.shape
    fg = spec.fg_mean + spec.fg_std * rng.standard_normal(shape)
    bg = spec.bg_mean + spec.bg_std * rng.standard_normal(shape)
    texture = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=2.0)
    scale = texture.std()
    if scale > 0:
        texture = texture / scale
    image = np.where(label > 0, fg, bg) + spec.texture_amplitude * texture
    image = np.clip(image, 0.0, 1.0)
    if spec.polarity < 0:
        image = 1.0 - image
    return image


def generate_sample(spec: DomainSpec, rng: np.random.Generator) -> SegSample:
    size = spec.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    lo, hi = spec.blob_count
    label = np.zeros((size, size), dtype=np.int64)
    for _ in range(int(rng.integers(lo, hi + 1))):
        label[_blob_mask(spec, rng, yy, xx)] = 1
    if not label.any():
        # 半径下限が小さすぎて画素に乗らなかった場合は中心 1 画素を立てる
        label[size // 2, size // 2] = 1
    image = _render(spec, label, rng)
    return SegSample(image=image[None].astype(np.float64), label=label)


def generate_domain(spec: DomainSpec, n: int, seed: int) -> Dataset:
    """
    spec に従って n 枚生成する。i 枚目は SeedSequence([seed, i]) だけで決まる。
    """
    if n < 1:
        raise EmptyDatasetError(f"generate_domain: n must be >= 1 (got {n})")
    samples = [
        generate_sample(spec, np.random.default_rng(np.random.SeedSequence([seed, i])))
        for i in range(n)
    ]
    logger.debug("[SynthData] generated domain=%s n=%d seed=%d", spec.name, n, seed)
    return Dataset(domain=spec.name, seed=seed, samples=samples)


# ---------------------------------------------------------------------------
# few-shot 分割
# ---------------------------------------------------------------------------


def holdout_count(n: int) -> int:
    return max(1, int(round(n * TEST_FRACTION)))


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """
    (test, pool) の添字。shots に依存しない。
    """
    if n < 2:
        raise EmptyDatasetError(f"cannot split a dataset of {n} samples")
    perm = np.random.default_rng(np.random.SeedSequence([seed, STREAM_SPLIT])).permutation(n)
    n_test = holdout_count(n)
    test = np.sort(perm[:n_test])
    pool = np.sort(perm[n_test:])
    return test, pool


def training_pool(dataset: Dataset, seed: int) -> Dataset:
    """8 割側の全サンプル（All-shot 用）"""
    _, pool = split_indices(len(dataset), seed)
    return dataset.subset([int(i) for i in pool])


def few_shot_split(dataset: Dataset, shots: int, seed: int) -> tuple[Dataset, Dataset]:
    """
    (train: shots 枚, test: 2 割) を返す。test は (dataset, seed) だけで決まり、
    train は 8 割プールを seed でシャッフルした先頭 shots 枚。
    """
    test, pool = split_indices(len(dataset), seed)
    if shots < 1 or shots > len(pool):
        raise ConfigError(f"shots={shots} out of range for a training pool of {len(pool)}")
    order = np.random.default_rng(np.random.SeedSequence([seed, STREAM_SHOTS])).permutation(pool)
    train = [int(i) for i in order[:shots]]
    return dataset.subset(train), dataset.subset([int(i) for i in test])


# ---------------------------------------------------------------------------
# データ拡張
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    """
    拡張の強さ。各項目を 0（または 1 倍）にすれば、その変換は常に恒等になる。
    """

    enabled: bool = True
    flip_prob: float = 0.5
    rotation_deg: float = 15.0
    scale_range: tuple[float, float] = (0.85, 1.25)
    noise_max_sigma: float = 0.05
    brightness: float = 0.1
    contrast_range: tuple[float, float] = (0.9, 1.1)

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(
            flip_prob=0.0,
            rotation_deg=0.0,
            scale_range=(1.0, 1.0),
            noise_max_sigma=0.0,
            brightness=0.0,
            contrast_range=(1.0, 1.0),
        )

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(enabled=False)


def flip(sample: SegSample, axis: int) -> SegSample:
    """axis=1 で水平、axis=0 で垂直反転（label 基準の軸）"""
    return SegSample(
        image=np.flip(sample.image, axis=axis + 1).copy(),
        label=np.flip(sample.label, axis=axis).copy(),
    )


def _affine(sample: SegSample, angle_deg: float, scale: float) -> SegSample:
    h, w = sample.label.shape
    theta = math.radians(angle_deg)
    # 出力座標 → 入力座標 の逆写像
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]) / scale
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - rot @ center
    image = ndimage.affine_transform(
        sample.image[0], rot, offset=offset, order=1, mode="nearest"
    )
    label = ndimage.affine_transform(
        sample.label, rot, offset=offset, order=0, mode="constant", cval=0
    )
    return SegSample(image=image[None], label=label.astype(sample.label.dtype))


def augment(sample: SegSample, rng: np.random.Generator, config: Optional[AugmentConfig] = None) -> SegSample:
    """
    反転 → 回転・拡縮 → ノイズ → 明るさ・コントラスト の順に適用する。
    乱数は常に同じ順で引き、恒等になる変換は実行しない。
    """
    config = config or AugmentConfig()
    if not config.enabled:
        return sample

    flip_h = rng.random() < config.flip_prob
    flip_v = rng.random() < config.flip_prob
    angle = rng.uniform(-config.rotation_deg, config.rotation_deg)
    scale = rng.uniform(*config.scale_range)
    sigma = rng.uniform(0.0, config.noise_max_sigma)
    shift = rng.uniform(-config.brightness, config.brightness)
    gain = rng.uniform(*config.contrast_range)

    out = sample
    if flip_h:
        out = flip(out, axis=1)
    if flip_v:
        out = flip(out, axis=0)
    if angle != 0.0 or scale != 1.0:
        out = _affine(out, angle, scale)

    image = out.image
    touched = False
    if sigma > 0.0:
        image = image + rng.normal(0.0, sigma, size=image.shape)
        touched = True
    if gain != 1.0 or shift != 0.0:
        mean = image.mean()
        image = (image - mean) * gain + mean + shift
        touched = True
    if touched or out is not sample:
        image = np.clip(image, 0.0, 1.0)
        out = SegSample(image=image.astype(sample.image.dtype, copy=False), label=out.label)
    return out
