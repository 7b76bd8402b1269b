import numpy as np
import pytest

from Domain.errors import ConfigError, ShapeMismatchError
from Domain.model_config import ModelConfig
from Domain.parameter import ParameterRole, Region
from Network import build_unet, forward, partition_kernels, predict, registry_digest, total_scalars
from Network.registry import kernel_index_matrix


def test_build_is_deterministic(tiny_config):
    a = build_unet(tiny_config, seed=7)
    b = build_unet(tiny_config, seed=7)
    c = build_unet(tiny_config, seed=8)
    np.testing.assert_array_equal(a.flat_params(), b.flat_params())
    assert not np.array_equal(a.flat_params(), c.flat_params())
    assert registry_digest(a.registry) == registry_digest(c.registry)


def test_forward_shape_and_prediction(tiny_model, rng):
    images = rng.standard_normal((3, 1, 8, 8))
    logits = forward(tiny_model, images)
    assert logits.shape == (3, 2, 8, 8)
    pred = predict(tiny_model, images)
    assert pred.shape == (3, 8, 8)
    assert set(np.unique(pred)) <= {0, 1}


def test_registry_offsets_are_contiguous(tiny_model):
    offset = 0
    for i, meta in enumerate(tiny_model.registry):
        assert meta.id == i
        assert meta.offset == offset
        assert tiny_model.params[meta.id].shape == meta.shape
        offset = meta.stop
    assert offset == total_scalars(tiny_model.registry) == tiny_model.num_scalars


def test_initial_values(tiny_model):
    for meta in tiny_model.registry:
        value = tiny_model.params[meta.id]
        if meta.role.is_bias or meta.role is ParameterRole.NORM_SHIFT:
            assert np.all(value == 0.0)
        elif meta.role is ParameterRole.NORM_SCALE:
            assert np.all(value == 1.0)


def test_kernel_groups_partition_weight_scalars(tiny_model):
    groups = partition_kernels(tiny_model.registry)
    covered = np.concatenate([g.indices for g in groups])
    assert len(covered) == len(np.unique(covered))

    expected = np.concatenate([
        np.arange(m.offset, m.stop) for m in tiny_model.registry if m.role.is_kernel_weight
    ])
    np.testing.assert_array_equal(np.sort(covered), expected)
    assert [g.group_id for g in groups] == list(range(len(groups)))
    for g in groups:
        assert np.all(np.diff(g.indices) > 0)


def test_max_kernel_size_for_tiny_config(tiny_model):
    groups = partition_kernels(tiny_model.registry)
    # ボトルネック conv2 / decoder.1 conv1 の入力 8ch x 3x3
    assert max(g.size for g in groups) == 72


def test_transposed_kernel_groups_follow_output_channel(tiny_model):
    meta = next(m for m in tiny_model.registry if m.role is ParameterRole.TRANSPOSED_CONV_WEIGHT)
    cin, cout, kh, kw = meta.shape
    rows = kernel_index_matrix(meta)
    assert rows.shape == (cout, cin * kh * kw)
    local = np.arange(meta.numel).reshape(meta.shape) + meta.offset
    np.testing.assert_array_equal(np.sort(rows[0]), np.sort(local[:, 0].reshape(-1)))


def test_layer_granularity_groups_whole_tensor():
    config = ModelConfig(base_width=2, depth=2, kernel_granularity="layer")
    model = build_unet(config, seed=0)
    groups = partition_kernels(model.registry)
    weights = [m for m in model.registry if m.role.is_kernel_weight]
    assert len(groups) == len(weights)
    assert [g.size for g in groups] == [m.numel for m in weights]


def test_regions_are_assigned(tiny_model):
    regions = {m.name.split(".")[0]: m.region for m in tiny_model.registry}
    assert regions["encoder"] is Region.ENCODER
    assert regions["bottleneck"] is Region.BOTTLENECK
    assert regions["decoder"] is Region.DECODER
    assert regions["head"] is Region.HEAD


def test_forward_rejects_indivisible_size(tiny_model):
    with pytest.raises(ShapeMismatchError):
        forward(tiny_model, np.zeros((1, 1, 6, 6)))


def test_forward_rejects_wrong_channels(tiny_model):
    with pytest.raises(ShapeMismatchError):
        forward(tiny_model, np.zeros((1, 3, 8, 8)))


def test_clone_is_independent(tiny_model):
    twin = tiny_model.clone()
    twin.params[0][...] = 99.0
    assert not np.any(tiny_model.params[0] == 99.0)


@pytest.mark.parametrize("kwargs", [{"depth": 1}, {"base_width": 1}, {"dtype": "float16"}])
def test_invalid_model_config(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


def test_float32_model_keeps_dtype(rng):
    model = build_unet(ModelConfig(base_width=2, depth=2, dtype="float32"), seed=0)
    assert all(v.dtype == np.float32 for v in model.params.values())
    assert forward(model, rng.standard_normal((1, 1, 8, 8))).dtype == np.float32


def test_param_by_name(tiny_model):
    np.testing.assert_array_equal(tiny_model.param_by_name("head.bias"), np.zeros(2))
    assert tiny_model.param_by_name("encoder.0.conv1.weight").shape == (2, 1, 3, 3)
    with pytest.raises(KeyError):
        tiny_model.param_by_name("nope")
