from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np

from Autodiff import functional as F
from Autodiff.tape import GradientTape
from Autodiff.tensor import Tensor, resolve_dtype
from Domain.errors import ShapeMismatchError
from Domain.model_config import KernelGranularity, ModelConfig
from Domain.parameter import ParameterMeta, ParameterRole, Region
from Network.registry import total_scalars

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvLayer:
    name: str
    weight_id: int
    bias_id: int
    region: Region
    transposed: bool = False
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class NormLayer:
    name: str
    scale_id: int
    shift_id: int


@dataclass(frozen=True)
class ConvBlock:
    """
    conv3x3 → IN → LeakyReLU → conv3x3 → IN → LeakyReLU
    """

    name: str
    region: Region
    out_channels: int
    conv1: ConvLayer
    conv2: ConvLayer
    norm1: Optional[NormLayer] = None
    norm2: Optional[NormLayer] = None


@dataclass(frozen=True)
class LoraFactors:
    layer_name: str
    a_id: int
    b_id: int
    rank: int


@dataclass(frozen=True)
class AdapterModule:
    block_name: str
    down_weight_id: int
    down_bias_id: int
    up_weight_id: int
    up_bias_id: int
    width: int


@dataclass
class Model:
    """
    2D U-Net 本体。params は id -> 配列、registry は id 順の ParameterMeta。
    LoRA / Adapter を注入した場合は補助パラメータが registry の末尾に追加される。
    """

    config: ModelConfig
    seed: int
    params: dict[int, np.ndarray]
    registry: list[ParameterMeta]
    encoder: list[ConvBlock]
    bottleneck: ConvBlock
    ups: list[ConvLayer]
    decoder: list[ConvBlock]
    head: ConvLayer
    lora: dict[str, LoraFactors] = field(default_factory=dict)
    adapters: dict[str, AdapterModule] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def dtype(self) -> np.dtype:
        return resolve_dtype(self.config.dtype)

    @property
    def blocks(self) -> list[ConvBlock]:
        return [*self.encoder, self.bottleneck, *self.decoder]

    @property
    def conv_layers(self) -> list[ConvLayer]:
        layers: list[ConvLayer] = []
        for block in self.encoder:
            layers += [block.conv1, block.conv2]
        layers += [self.bottleneck.conv1, self.bottleneck.conv2]
        for up, block in zip(self.ups, self.decoder):
            layers += [up, block.conv1, block.conv2]
        layers.append(self.head)
        return layers

    @property
    def base_registry(self) -> list[ParameterMeta]:
        return [m for m in self.registry if not m.role.is_auxiliary]

    @property
    def num_scalars(self) -> int:
        return total_scalars(self.registry)

    def meta(self, param_id: int) -> ParameterMeta:
        return self.registry[param_id]

    def param_by_name(self, name: str) -> np.ndarray:
        for m in self.registry:
            if m.name == name:
                return self.params[m.id]
        raise KeyError(name)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[m.id].reshape(-1) for m in self.registry])

    def clone(self) -> "Model":
        twin = copy.copy(self)
        twin.params = {k: v.copy() for k, v in self.params.items()}
        twin.registry = list(self.registry)
        twin.lora = dict(self.lora)
        twin.adapters = dict(self.adapters)
        twin.provenance = copy.deepcopy(self.provenance)
        return twin


class RegistryBuilder:
    """
    パラメータを登録順に積み上げ、id / offset / カーネル群 id を払い出す。
    """

    def __init__(self, granularity: KernelGranularity, params: Optional[dict[int, np.ndarray]] = None,
                 registry: Optional[list[ParameterMeta]] = None) -> None:
        self.granularity = granularity
        self.params: dict[int, np.ndarray] = params if params is not None else {}
        self.registry: list[ParameterMeta] = registry if registry is not None else []
        self._next_group = 1 + max(
            (g for m in self.registry for g in m.kernel_group_ids), default=-1
        )

    def add(self, name: str, role: ParameterRole, region: Region, value: np.ndarray) -> int:
        param_id = len(self.registry)
        offset = self.registry[-1].stop if self.registry else 0
        groups: tuple[int, ...] = ()
        if role.is_kernel_weight:
            n_groups = 1
            if self.granularity is KernelGranularity.FILTER:
                # 出力チャネル軸: conv は 0 軸目、転置畳み込みは 1 軸目
                axis = 1 if role is ParameterRole.TRANSPOSED_CONV_WEIGHT else 0
                n_groups = value.shape[axis]
            groups = tuple(range(self._next_group, self._next_group + n_groups))
            self._next_group += n_groups
        self.registry.append(
            ParameterMeta(
                id=param_id,
                name=name,
                role=role,
                region=region,
                shape=tuple(value.shape),
                offset=offset,
                kernel_group_ids=groups,
            )
        )
        self.params[param_id] = np.ascontiguousarray(value)
        return param_id


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype: np.dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def build_unet(config: ModelConfig, seed: int) -> Model:
    """
    config と seed から決定的に U-Net を構築する。
    畳み込み重みは He（fan-in）初期化、バイアスは 0、IN の scale/shift は 1/0。
    """
    rng = np.random.default_rng(seed)
    dtype = resolve_dtype(config.dtype)
    rb = RegistryBuilder(config.kernel_granularity)

    def conv(name: str, region: Region, cin: int, cout: int, k: int, role: ParameterRole,
             bias_role: ParameterRole = ParameterRole.BIAS) -> ConvLayer:
        w = _he_normal(rng, (cout, cin, k, k), cin * k * k, dtype)
        wid = rb.add(f"{name}.weight", role, region, w)
        bid = rb.add(f"{name}.bias", bias_role, region, np.zeros(cout, dtype=dtype))
        return ConvLayer(name, wid, bid, region, padding=k // 2)

    def norm(name: str, region: Region, c: int) -> Optional[NormLayer]:
        if not config.instance_norm:
            return None
        sid = rb.add(f"{name}.scale", ParameterRole.NORM_SCALE, region, np.ones(c, dtype=dtype))
        hid = rb.add(f"{name}.shift", ParameterRole.NORM_SHIFT, region, np.zeros(c, dtype=dtype))
        return NormLayer(name, sid, hid)

    def block(name: str, region: Region, cin: int, cout: int) -> ConvBlock:
        c1 = conv(f"{name}.conv1", region, cin, cout, 3, ParameterRole.CONV_WEIGHT)
        n1 = norm(f"{name}.norm1", region, cout)
        c2 = conv(f"{name}.conv2", region, cout, cout, 3, ParameterRole.CONV_WEIGHT)
        n2 = norm(f"{name}.norm2", region, cout)
        return ConvBlock(name, region, cout, c1, c2, n1, n2)

    widths = [config.base_width * 2**s for s in range(config.depth + 1)]

    encoder = []
    cin = config.in_channels
    for s in range(config.depth):
        encoder.append(block(f"encoder.{s}", Region.ENCODER, cin, widths[s]))
        cin = widths[s]
    bottleneck = block("bottleneck", Region.BOTTLENECK, widths[-2], widths[-1])

    ups, decoder = [], []
    for s in reversed(range(config.depth)):
        name = f"decoder.{s}.up"
        # 転置畳み込み: 重み (Cin, Cout, 2, 2)、各出力画素は Cin 個の入力だけを見る
        w = _he_normal(rng, (widths[s + 1], widths[s], 2, 2), widths[s + 1], dtype)
        wid = rb.add(f"{name}.weight", ParameterRole.TRANSPOSED_CONV_WEIGHT, Region.DECODER, w)
        bid = rb.add(f"{name}.bias", ParameterRole.BIAS, Region.DECODER, np.zeros(widths[s], dtype=dtype))
        ups.append(ConvLayer(name, wid, bid, Region.DECODER, transposed=True, stride=2, padding=0))
        decoder.append(block(f"decoder.{s}", Region.DECODER, 2 * widths[s], widths[s]))

    head = conv("head", Region.HEAD, widths[0], config.num_classes, 1,
                ParameterRole.HEAD_WEIGHT, ParameterRole.HEAD_BIAS)

    model = Model(
        config=config,
        seed=seed,
        params=rb.params,
        registry=rb.registry,
        encoder=encoder,
        bottleneck=bottleneck,
        ups=ups,
        decoder=decoder,
        head=head,
    )
    logger.debug(
        "[UNet] built depth=%d width=%d params=%d scalars=%d",
        config.depth, config.base_width, len(model.registry), model.num_scalars,
    )
    return model


# ---------------------------------------------------------------------------
# 順伝播
# ---------------------------------------------------------------------------


class _ParamSource:
    def __init__(self, model: Model, tape: Optional[GradientTape]) -> None:
        self.model = model
        self.tape = tape

    def __call__(self, param_id: int) -> Tensor:
        value = self.model.params[param_id]
        if self.tape is None:
            return Tensor(value)
        return self.tape.parameter(param_id, value)


def _effective_weight(p: _ParamSource, model: Model, layer: ConvLayer) -> Tensor:
    weight = p(layer.weight_id)
    factors = model.lora.get(layer.name)
    if factors is None:
        return weight
    # ΔW = B·A を (Cout, Cin, kh, kw) に戻す。転置畳み込みは (Cin, Cout, kh, kw) へ並べ替える
    delta = F.matmul(p(factors.b_id), p(factors.a_id))
    shape = weight.shape
    if layer.transposed:
        delta = F.transpose(F.reshape(delta, (shape[1], shape[0], shape[2], shape[3])), (1, 0, 2, 3))
    else:
        delta = F.reshape(delta, shape)
    return F.add(weight, delta)


def _conv(p: _ParamSource, model: Model, layer: ConvLayer, x: Tensor) -> Tensor:
    weight = _effective_weight(p, model, layer)
    if layer.transposed:
        return F.conv_transpose2d(x, weight, p(layer.bias_id), layer.stride, layer.padding)
    return F.conv2d(x, weight, p(layer.bias_id), layer.stride, layer.padding)


def _block(p: _ParamSource, model: Model, block: ConvBlock, x: Tensor) -> Tensor:
    h = _conv(p, model, block.conv1, x)
    if block.norm1 is not None:
        h = F.instance_norm2d(h, p(block.norm1.scale_id), p(block.norm1.shift_id))
    h = F.leaky_relu(h)
    h = _conv(p, model, block.conv2, h)
    if block.norm2 is not None:
        h = F.instance_norm2d(h, p(block.norm2.scale_id), p(block.norm2.shift_id))
    h = F.leaky_relu(h)

    adapter = model.adapters.get(block.name)
    if adapter is not None:
        a = F.conv2d(h, p(adapter.down_weight_id), p(adapter.down_bias_id))
        a = F.leaky_relu(a)
        a = F.conv2d(a, p(adapter.up_weight_id), p(adapter.up_bias_id))
        h = F.add(h, a)
    return h


def forward(
    model: Model,
    batch: Union[np.ndarray, Tensor],
    tape: Optional[GradientTape] = None,
) -> Tensor:
    """
    batch (N, Cin, H, W) -> logits (N, num_classes, H, W)。tape を渡したときだけ記録する。
    """
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=model.dtype))
    if x.ndim != 4:
        raise ShapeMismatchError("forward", "batch.ndim", 4, x.ndim)
    if x.shape[1] != model.config.in_channels:
        raise ShapeMismatchError("forward", "Cin", model.config.in_channels, x.shape[1])
    div = model.config.spatial_divisor
    if x.shape[2] % div or x.shape[3] % div:
        raise ShapeMismatchError("forward", "H/W", f"divisible by {div}", x.shape[2:])

    p = _ParamSource(model, tape)
    skips: list[Tensor] = []
    h = x
    for block in model.encoder:
        h = _block(p, model, block, h)
        skips.append(h)
        h = F.max_pool2d(h)
    h = _block(p, model, model.bottleneck, h)
    for up, block, skip in zip(model.ups, model.decoder, reversed(skips)):
        h = _conv(p, model, up, h)
        h = F.concat_channels([skip, h])
        h = _block(p, model, block, h)
    return _conv(p, model, model.head, h)


def predict(model: Model, images: np.ndarray) -> np.ndarray:
    """
    argmax によるクラス予測 (N, H, W)。
    """
    logits = forward(model, images).data
    return logits.argmax(axis=1)
