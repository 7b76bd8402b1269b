import numpy as np
import pytest

from Domain.data import DomainSpec, SegSample
from Domain.errors import ConfigError, EmptyDatasetError
from Domain.experiment import TaskKind
from Services.synth_data import (
    AugmentConfig,
    augment,
    few_shot_split,
    flip,
    generate_domain,
    holdout_count,
    source_domain,
    split_indices,
    task_domain,
    training_pool,
)


def test_generation_is_deterministic_per_sample():
    spec = source_domain(16)
    a = generate_domain(spec, 5, seed=1)
    b = generate_domain(spec, 3, seed=1)
    for x, y in zip(a.samples, b.samples):
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.label, y.label)
    c = generate_domain(spec, 3, seed=2)
    assert not np.array_equal(a.samples[0].image, c.samples[0].image)


def test_samples_have_valid_shapes_and_ranges():
    for sample in generate_domain(task_domain(TaskKind.FAR, 16), 8, seed=0).samples:
        assert sample.image.shape == (1, 16, 16)
        assert sample.label.shape == (16, 16)
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0
        assert set(np.unique(sample.label)) == {0, 1}


def test_far_domain_inverts_polarity():
    def contrast(spec):
        ds = generate_domain(spec, 20, seed=0)
        fg = np.concatenate([s.image[0][s.label == 1] for s in ds.samples])
        bg = np.concatenate([s.image[0][s.label == 0] for s in ds.samples])
        return fg.mean() - bg.mean()

    assert contrast(source_domain(32)) > 0.2
    assert contrast(task_domain(TaskKind.NEAR, 32)) > 0.1
    assert contrast(task_domain(TaskKind.FAR, 32)) < -0.1


def test_domain_spec_validation():
    with pytest.raises(ConfigError):
        DomainSpec(name="bad", blob_count=(2, 1))
    with pytest.raises(ConfigError):
        DomainSpec(name="bad", polarity=0)
    with pytest.raises(ConfigError):
        DomainSpec(name="bad", image_size=8)


def test_generate_rejects_empty():
    with pytest.raises(EmptyDatasetError):
        generate_domain(source_domain(16), 0, seed=0)


def test_split_is_disjoint_and_stable():
    test, pool = split_indices(120, seed=7)
    assert len(test) == holdout_count(120) == 24
    assert len(pool) == 96
    assert not set(test) & set(pool)
    again, _ = split_indices(120, seed=7)
    np.testing.assert_array_equal(test, again)


def test_test_set_does_not_depend_on_shots():
    ds = generate_domain(source_domain(16), 20, seed=0)
    _, test_a = few_shot_split(ds, 2, seed=3)
    train_b, test_b = few_shot_split(ds, 5, seed=3)
    assert len(train_b) == 5
    for x, y in zip(test_a.samples, test_b.samples):
        assert x is y
    pool = training_pool(ds, seed=3)
    assert len(pool) == 16
    assert all(any(s is p for p in pool.samples) for s in train_b.samples)


@pytest.mark.parametrize("shots", [0, 17])
def test_few_shot_split_rejects_bad_shots(shots):
    ds = generate_domain(source_domain(16), 20, seed=0)
    with pytest.raises(ConfigError):
        few_shot_split(ds, shots, seed=0)


def test_augment_identity_returns_same_sample():
    sample = generate_domain(source_domain(16), 1, seed=0).samples[0]
    out = augment(sample, np.random.default_rng(0), AugmentConfig.identity())
    assert out is sample
    assert augment(sample, np.random.default_rng(0), AugmentConfig.disabled()) is sample


def test_flip_moves_label_and_image_together():
    image = np.arange(16, dtype=float).reshape(1, 4, 4) / 16
    label = np.zeros((4, 4), dtype=np.int64)
    label[0, 0] = 1
    out = flip(SegSample(image, label), axis=1)
    assert out.label[0, 3] == 1
    assert out.image[0, 0, 3] == image[0, 0, 0]


def test_augment_is_deterministic_and_keeps_labels_binary():
    sample = generate_domain(source_domain(16), 1, seed=0).samples[0]
    a = augment(sample, np.random.default_rng(9))
    b = augment(sample, np.random.default_rng(9))
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.label, b.label)
    assert set(np.unique(a.label)) <= {0, 1}
    assert a.image.min() >= 0.0 and a.image.max() <= 1.0
    assert a.image.shape == sample.image.shape
