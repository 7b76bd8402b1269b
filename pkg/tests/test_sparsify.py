import numpy as np
import pytest

from Domain.errors import SelectionStateError
from Domain.parameter import Region
from Domain.strategy import GradientSnapshot, StrategyConfig, StrategyKind
from Network.registry import partition_kernels
from Services.sparsify import (
    accumulate_sgst,
    build_selection,
    kernel_layout,
    new_sgst_state,
    select_top_gamma,
    sgst_warmup,
    static_bits,
    strategy_param_count,
)


def _random_snapshot(model, seed=0, iteration=0):
    rng = np.random.default_rng(seed)
    return GradientSnapshot(
        iteration=iteration,
        grads={m.id: rng.standard_normal(m.shape) for m in model.registry},
    )


def _bias_norm_count(model):
    return sum(m.numel for m in model.registry if m.role.is_bias or m.role.is_norm)


def test_select_top_gamma_basic():
    g = np.array([0.1, -3.0, 2.0, 0.5])
    np.testing.assert_array_equal(select_top_gamma(g, 1), [1])
    np.testing.assert_array_equal(select_top_gamma(g, 2), [1, 2])
    np.testing.assert_array_equal(select_top_gamma(g, 10), [0, 1, 2, 3])


def test_select_top_gamma_ties_prefer_lower_index():
    np.testing.assert_array_equal(select_top_gamma(np.array([1.0, -1.0, 1.0]), 1), [0])
    np.testing.assert_array_equal(select_top_gamma(np.zeros(5), 2), [0, 1])


def test_select_top_gamma_rejects_empty():
    with pytest.raises(ValueError):
        select_top_gamma(np.array([]), 1)


@pytest.mark.parametrize("gamma", [1, 2, 3])
def test_dgst_picks_gamma_per_kernel(tiny_model, gamma):
    snapshot = _random_snapshot(tiny_model)
    mask = build_selection(StrategyConfig(StrategyKind.DGST, gamma=gamma), tiny_model.registry, snapshot, seed=0)
    flat = snapshot.flat(tiny_model.registry)

    for group in partition_kernels(tiny_model.registry):
        chosen = group.indices[mask.bits[group.indices]]
        assert len(chosen) == min(gamma, group.size)
        expected = group.indices[select_top_gamma(flat[group.indices], gamma)]
        np.testing.assert_array_equal(chosen, expected)

    expected_count = strategy_param_count(StrategyConfig(StrategyKind.DGST, gamma=gamma), tiny_model.registry)
    assert mask.count == expected_count
    for m in tiny_model.registry:
        if m.role.is_bias or m.role.is_norm:
            assert mask.for_param(m).all()


def test_dgst_with_max_gamma_selects_everything(tiny_model):
    layout = kernel_layout(tiny_model.registry)
    strategy = StrategyConfig(StrategyKind.DGST, gamma=layout.max_kernel_size)
    mask = build_selection(strategy, tiny_model.registry, _random_snapshot(tiny_model), seed=0)
    assert mask.bits.all()


def test_dgst_requires_snapshot(tiny_model):
    with pytest.raises(ValueError):
        build_selection(StrategyConfig(StrategyKind.DGST), tiny_model.registry, None, seed=0)


def test_drst_is_reproducible_and_varies_by_iteration(tiny_model):
    strategy = StrategyConfig(StrategyKind.DRST, gamma=2)
    a = build_selection(strategy, tiny_model.registry, None, seed=5, iteration=3)
    b = build_selection(strategy, tiny_model.registry, None, seed=5, iteration=3)
    c = build_selection(strategy, tiny_model.registry, None, seed=5, iteration=4)
    d = build_selection(strategy, tiny_model.registry, None, seed=6, iteration=3)
    np.testing.assert_array_equal(a.bits, b.bits)
    assert not np.array_equal(a.bits, c.bits)
    assert not np.array_equal(a.bits, d.bits)
    for group in partition_kernels(tiny_model.registry):
        assert a.bits[group.indices].sum() == min(2, group.size)


def test_sgst_mask_before_warmup_raises(tiny_model):
    strategy = StrategyConfig(StrategyKind.SGST)
    with pytest.raises(SelectionStateError):
        build_selection(strategy, tiny_model.registry, None, seed=0)
    state = new_sgst_state(tiny_model.registry, target_iters=2)
    with pytest.raises(SelectionStateError):
        build_selection(strategy, tiny_model.registry, None, seed=0, sgst_state=state)


def test_sgst_freezes_on_accumulated_magnitude(tiny_model):
    layout = kernel_layout(tiny_model.registry)
    state = new_sgst_state(tiny_model.registry, target_iters=2)
    s1 = _random_snapshot(tiny_model, seed=1)
    s2 = _random_snapshot(tiny_model, seed=2)
    accumulate_sgst(state, s1, tiny_model.registry, layout, gamma=1)
    assert not state.is_frozen
    accumulate_sgst(state, s2, tiny_model.registry, layout, gamma=1)
    assert state.is_frozen

    total = np.abs(s1.flat(tiny_model.registry)) + np.abs(s2.flat(tiny_model.registry))
    for group in partition_kernels(tiny_model.registry):
        best = group.indices[select_top_gamma(total[group.indices], 1)]
        assert state.frozen[best].all()
        assert state.frozen[group.indices].sum() == 1

    strategy = StrategyConfig(StrategyKind.SGST)
    m10 = build_selection(strategy, tiny_model.registry, None, seed=0, sgst_state=state, iteration=10)
    m20 = build_selection(strategy, tiny_model.registry, None, seed=0, sgst_state=state, iteration=20)
    np.testing.assert_array_equal(m10.bits, m20.bits)


def test_sgst_warmup_does_not_touch_weights(tiny_model, tiny_samples):
    before = tiny_model.flat_params()
    state = sgst_warmup(tiny_model, tiny_samples, warmup_iters=2, seed=0, gamma=1)
    assert state.is_frozen
    assert state.iters_done == 2
    np.testing.assert_array_equal(tiny_model.flat_params(), before)


def test_static_masks_by_role(tiny_model):
    reg = tiny_model.registry
    full = static_bits(StrategyKind.FULL, reg)
    assert full.all()

    head = static_bits(StrategyKind.LINEAR_PROB, reg)
    assert head.sum() == sum(m.numel for m in reg if m.region is Region.HEAD)

    bias = static_bits(StrategyKind.BIAS, reg)
    assert bias.sum() == sum(m.numel for m in reg if m.role.is_bias)

    affine = static_bits(StrategyKind.AFFINE_IN, reg)
    assert affine.sum() == sum(m.numel for m in reg if m.role.is_norm)

    bias_norm = static_bits(StrategyKind.BIAS_NORM, reg)
    np.testing.assert_array_equal(bias_norm, bias | affine)


def test_encoder_and_decoder_masks_split_bottleneck(tiny_model):
    reg = tiny_model.registry
    enc = static_bits(StrategyKind.ENCODER_ONLY, reg)
    dec = static_bits(StrategyKind.DECODER_ONLY, reg)
    assert not np.any(enc & dec)

    bottleneck = next(m for m in reg if m.region is Region.BOTTLENECK)
    assert enc[bottleneck.offset]
    assert not dec[bottleneck.offset]

    enc_alt = static_bits(StrategyKind.ENCODER_ONLY, reg, bottleneck_as_encoder=False)
    dec_alt = static_bits(StrategyKind.DECODER_ONLY, reg, bottleneck_as_encoder=False)
    assert not enc_alt[bottleneck.offset]
    assert dec_alt[bottleneck.offset]

    head = next(m for m in reg if m.region is Region.HEAD)
    assert not dec[head.offset]
    assert not enc[head.offset]


def test_static_strategies_do_not_change_with_snapshot(tiny_model):
    strategy = StrategyConfig(StrategyKind.BIAS_NORM)
    a = build_selection(strategy, tiny_model.registry, _random_snapshot(tiny_model, 1), seed=0)
    b = build_selection(strategy, tiny_model.registry, _random_snapshot(tiny_model, 2), seed=0)
    np.testing.assert_array_equal(a.bits, b.bits)


def test_param_count_sparsified(tiny_model):
    layout = kernel_layout(tiny_model.registry)
    n_kernels = sum(rows.shape[0] for _, rows in layout.kernels)
    count = strategy_param_count(StrategyConfig(StrategyKind.DGST, gamma=1), tiny_model.registry)
    assert count == n_kernels + _bias_norm_count(tiny_model)
    full = strategy_param_count(StrategyConfig(StrategyKind.DGST, gamma=10_000), tiny_model.registry)
    assert full == tiny_model.num_scalars
