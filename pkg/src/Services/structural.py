"""
構造的ベースライン（LoRA / Adapter）の注入と除去。

どちらも注入直後は順伝播が元のモデルと一致するように初期化する
（LoRA は B=0、Adapter は up 側の重み・バイアス=0）。
"""
from __future__ import annotations

import logging

import numpy as np

from Domain.errors import ConfigError
from Domain.parameter import ParameterRole
from Network.unet import AdapterModule, LoraFactors, Model, RegistryBuilder

logger = logging.getLogger(__name__)

# 注入用乱数の SeedSequence タグ
STREAM_LORA = 31
STREAM_ADAPTER = 32


def _lora_shape(model: Model, layer) -> tuple[int, int]:
    # ΔW = B·A の (行, 列)。転置畳み込みは出力チャネルを行に取る
    shape = model.params[layer.weight_id].shape
    if layer.transposed:
        return shape[1], shape[0] * shape[2] * shape[3]
    return shape[0], shape[1] * shape[2] * shape[3]


def lora_inject(model: Model, rank: int, seed: int) -> Model:
    """
    ヘッド以外の全畳み込み層に rank r の低ランク分解 ΔW = B·A を付けたコピーを返す。
    A は N(0, 1/cols)、B は 0 で初期化する。
    """
    if model.lora or model.adapters:
        raise ConfigError("model already carries structural parameters")
    twin = model.clone()
    rb = RegistryBuilder(model.config.kernel_granularity, twin.params, twin.registry)
    rng = np.random.default_rng(np.random.SeedSequence([seed, STREAM_LORA]))
    dtype = model.dtype

    for layer in model.conv_layers:
        if layer is model.head:
            continue
        rows, cols = _lora_shape(model, layer)
        if rank > min(rows, cols):
            raise ConfigError(
                f"lora rank {rank} exceeds min dimension {min(rows, cols)} of {layer.name}"
            )
        a = (rng.standard_normal((rank, cols)) / np.sqrt(cols)).astype(dtype)
        b = np.zeros((rows, rank), dtype=dtype)
        a_id = rb.add(f"{layer.name}.lora_a", ParameterRole.LORA_A, layer.region, a)
        b_id = rb.add(f"{layer.name}.lora_b", ParameterRole.LORA_B, layer.region, b)
        twin.lora[layer.name] = LoraFactors(layer.name, a_id, b_id, rank)

    twin.provenance = {**twin.provenance, "structural": "lora", "rank": rank, "structural_seed": seed}
    logger.info("[LoRA] injected rank=%d layers=%d aux_scalars=%d",
                rank, len(twin.lora), twin.num_scalars - model.num_scalars)
    return twin


def adapter_inject(model: Model, width: int, seed: int) -> Model:
    """
    各 conv ブロックの出力に 1x1 ボトルネック Adapter（down → LeakyReLU → up）を残差で付ける。
    """
    if model.lora or model.adapters:
        raise ConfigError("model already carries structural parameters")
    twin = model.clone()
    rb = RegistryBuilder(model.config.kernel_granularity, twin.params, twin.registry)
    rng = np.random.default_rng(np.random.SeedSequence([seed, STREAM_ADAPTER]))
    dtype = model.dtype

    for block in model.blocks:
        c = block.out_channels
        down_w = (rng.standard_normal((width, c, 1, 1)) * np.sqrt(2.0 / c)).astype(dtype)
        ids = (
            rb.add(f"{block.name}.adapter.down.weight", ParameterRole.ADAPTER_WEIGHT, block.region, down_w),
            rb.add(f"{block.name}.adapter.down.bias", ParameterRole.ADAPTER_BIAS, block.region,
                   np.zeros(width, dtype=dtype)),
            rb.add(f"{block.name}.adapter.up.weight", ParameterRole.ADAPTER_WEIGHT, block.region,
                   np.zeros((c, width, 1, 1), dtype=dtype)),
            rb.add(f"{block.name}.adapter.up.bias", ParameterRole.ADAPTER_BIAS, block.region,
                   np.zeros(c, dtype=dtype)),
        )
        twin.adapters[block.name] = AdapterModule(block.name, *ids, width=width)

    twin.provenance = {**twin.provenance, "structural": "adapter", "width": width, "structural_seed": seed}
    logger.info("[Adapter] injected width=%d blocks=%d aux_scalars=%d",
                width, len(twin.adapters), twin.num_scalars - model.num_scalars)
    return twin


def remove_adapters(model: Model) -> Model:
    """
    補助パラメータ（LoRA / Adapter）をすべて外したコピーを返す。
    LoRA は ΔW を元の重みに畳み込んでから外すので、順伝播は変わらない。
    Adapter は残差ごと外すため、学習済み Adapter の寄与は失われる。
    """
    twin = model.clone()
    for factors in model.lora.values():
        layer = next(l for l in model.conv_layers if l.name == factors.layer_name)
        delta = model.params[factors.b_id] @ model.params[factors.a_id]
        shape = model.params[layer.weight_id].shape
        if layer.transposed:
            delta = delta.reshape(shape[1], shape[0], shape[2], shape[3]).transpose(1, 0, 2, 3)
        twin.params[layer.weight_id] = (model.params[layer.weight_id] + delta.reshape(shape)).astype(model.dtype)

    base = model.base_registry
    keep = {m.id for m in base}
    twin.params = {k: v for k, v in twin.params.items() if k in keep}
    twin.registry = list(base)
    twin.lora = {}
    twin.adapters = {}
    for key in ("structural", "rank", "width", "structural_seed"):
        twin.provenance.pop(key, None)
    return twin


def inject_from_provenance(model: Model, provenance: dict) -> Model:
    """
    チェックポイントの provenance から同じ構造を再注入する（値は後で上書きされる前提）。
    """
    kind = provenance.get("structural")
    if kind == "lora":
        return lora_inject(model, int(provenance["rank"]), int(provenance["structural_seed"]))
    if kind == "adapter":
        return adapter_inject(model, int(provenance["width"]), int(provenance["structural_seed"]))
    return model
