import numpy as np
import pytest

from Domain.errors import ConfigError
from Domain.optim_config import OptimConfig
from Domain.parameter import ParameterRole
from Domain.strategy import StrategyConfig, StrategyKind
from Network.unet import forward
from Services.sparsify import static_bits, strategy_param_count
from Services.structural import adapter_inject, inject_from_provenance, lora_inject, remove_adapters
from Services.synth_data import AugmentConfig
from Services.trainer import finetune_loop


def _inputs(n=10):
    rng = np.random.default_rng(42)
    return [rng.standard_normal((1, 1, 8, 8)) for _ in range(n)]


@pytest.mark.parametrize("inject", [lambda m: lora_inject(m, 1, 0), lambda m: adapter_inject(m, 2, 0)])
def test_injection_preserves_forward(tiny_model, inject):
    twin = inject(tiny_model)
    for x in _inputs():
        np.testing.assert_array_equal(forward(twin, x).data, forward(tiny_model, x).data)


def test_lora_targets_every_conv_but_head(tiny_model):
    twin = lora_inject(tiny_model, 1, seed=0)
    expected = {layer.name for layer in tiny_model.conv_layers if layer is not tiny_model.head}
    assert set(twin.lora) == expected
    assert twin.provenance["structural"] == "lora"
    for factors in twin.lora.values():
        assert np.all(twin.params[factors.b_id] == 0.0)
    # 元モデルは変わらない
    assert not tiny_model.lora
    assert len(tiny_model.registry) < len(twin.registry)


def test_lora_rank_too_large(tiny_model):
    with pytest.raises(ConfigError):
        lora_inject(tiny_model, rank=3, seed=0)


def test_double_injection_is_rejected(tiny_model):
    twin = adapter_inject(tiny_model, 2, seed=0)
    with pytest.raises(ConfigError):
        lora_inject(twin, 1, seed=0)


def test_adapter_names_and_mask(tiny_model):
    twin = adapter_inject(tiny_model, 2, seed=0)
    names = {m.name for m in twin.registry if m.role.is_auxiliary}
    assert "encoder.0.adapter.down.weight" in names
    assert "bottleneck.adapter.up.bias" in names
    assert len(twin.adapters) == len(tiny_model.blocks)

    bits = static_bits(StrategyKind.ADAPTER, twin.registry)
    aux = sum(m.numel for m in twin.registry if m.role.is_auxiliary)
    assert bits.sum() == aux
    assert strategy_param_count(StrategyConfig(StrategyKind.ADAPTER), twin.registry) == aux

    with_bias = static_bits(StrategyKind.ADAPTER, twin.registry, train_bias_norm=True)
    assert with_bias.sum() > aux


def test_lora_finetune_only_moves_aux_params(tiny_model, tiny_samples):
    strategy = StrategyConfig(StrategyKind.LORA, lora_rank=1)
    model, record = finetune_loop(tiny_model, strategy, tiny_samples, OptimConfig(lr0=0.05, epochs=2), seed=0,
                                  augment_config=AugmentConfig.disabled())
    assert record.status == "ok"
    for meta in tiny_model.registry:
        np.testing.assert_array_equal(model.params[meta.id], tiny_model.params[meta.id])
    b_ids = [m.id for m in model.registry if m.role is ParameterRole.LORA_B]
    assert any(np.any(model.params[i] != 0.0) for i in b_ids)


def test_remove_adapters_folds_lora(tiny_model):
    twin = lora_inject(tiny_model, 1, seed=0)
    rng = np.random.default_rng(5)
    for factors in twin.lora.values():
        twin.params[factors.b_id] = rng.standard_normal(twin.params[factors.b_id].shape) * 0.1
    plain = remove_adapters(twin)

    assert not plain.lora
    assert "structural" not in plain.provenance
    assert len(plain.registry) == len(tiny_model.registry)
    for x in _inputs(3):
        np.testing.assert_allclose(forward(plain, x).data, forward(twin, x).data, rtol=1e-10, atol=1e-10)


def test_remove_adapters_drops_adapter_params(tiny_model):
    twin = adapter_inject(tiny_model, 2, seed=0)
    plain = remove_adapters(twin)
    assert not plain.adapters
    np.testing.assert_array_equal(plain.flat_params(), tiny_model.flat_params())


def test_inject_from_provenance_rebuilds_layout(tiny_model):
    twin = adapter_inject(tiny_model, 2, seed=3)
    rebuilt = inject_from_provenance(tiny_model, twin.provenance)
    assert [m.to_dict() for m in rebuilt.registry] == [m.to_dict() for m in twin.registry]
    assert inject_from_provenance(tiny_model, {}) is tiny_model
