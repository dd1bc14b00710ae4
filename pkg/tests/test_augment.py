import numpy as np
import pytest
from hypothesis import given, strategies as st

from augbound._seeding import derive_rng
from augbound.augment import (IDENTITY, AugDistribution, Augmentation, ColorParams, CropParams, apply, apply_batch,
                              apply_color, apply_crop, apply_flip, apply_gray, crop_semantic_map, label_stats,
                              sample_augmentation, sample_augmentations)
from augbound.pixel_model import sample_semantic_image, toy_config
from oracles import bilinear_crop_brute


def rand_img(seed, d=8):
    return derive_rng(seed).random((d, d, 3))


def test_identity_distribution_is_exact():
    x = rand_img(0)
    for seed in range(5):
        aug = sample_augmentation(AugDistribution.identity(), derive_rng(seed))
        np.testing.assert_array_equal(apply(aug, x), x)


def test_default_distribution_draw_is_well_formed():
    dist = AugDistribution()
    assert dist.crop_scale == (0.2, 1.0)
    assert (dist.flip_prob, dist.color_prob, dist.gray_prob) == (0.5, 0.8, 0.2)
    augs = sample_augmentations(dist, derive_rng(1), 200)
    for a in augs:
        assert a.crop is not None and 0.2 <= a.crop.scale <= 1.0
        assert a.crop.tau + a.crop.scale <= 1.0 + 1e-12 and a.crop.tau2 + a.crop.scale <= 1.0 + 1e-12
        if a.color is not None:
            assert all(0 < g <= dist.brightness for g in a.color.gains)
    rate = np.mean([a.color is not None for a in augs])
    assert abs(rate - 0.8) < 4 * np.sqrt(0.8 * 0.2 / 200)


def test_same_seed_same_augmentation():
    a = sample_augmentation(AugDistribution(), derive_rng(42))
    b = sample_augmentation(AugDistribution(), derive_rng(42))
    assert a == b
    x = rand_img(42)
    np.testing.assert_array_equal(apply(a, x), apply(b, x))


def test_prefix_stable_sampling():
    dist = AugDistribution()
    assert sample_augmentations(dist, derive_rng(3), 5) == sample_augmentations(dist, derive_rng(3), 9)[:5]


def test_full_crop_is_bit_exact_identity():
    x = rand_img(1)
    np.testing.assert_array_equal(apply_crop(x, CropParams(1.0, 0.0, 0.0)), x)


@given(theta=st.floats(0.05, 1.0), tau=st.floats(0, 1), tau2=st.floats(0, 1), v=st.floats(0, 5))
def test_crop_of_constant_is_constant(theta, tau, tau2, v):
    x = np.full((6, 6, 3), v)
    np.testing.assert_allclose(apply_crop(x, CropParams(theta, tau, tau2)), x, rtol=1e-12, atol=1e-12)


def test_ramp_quadrant_matches_brute_force():
    d = 4
    ramp = np.arange(d * d * 3, dtype=float).reshape(d, d, 3)
    got = apply_crop(ramp, CropParams(0.5, 0.0, 0.0))
    np.testing.assert_allclose(got, bilinear_crop_brute(ramp, 0.5, 0.0, 0.0), atol=1e-12)


@given(theta=st.floats(0.125, 1.0), u=st.floats(0, 1), u2=st.floats(0, 1), seed=st.integers(0, 1000))
def test_crop_matches_brute_force(theta, u, u2, seed):
    x = rand_img(seed)
    tau, tau2 = u * (1 - theta), u2 * (1 - theta)
    np.testing.assert_allclose(apply_crop(x, CropParams(theta, tau, tau2)),
                               bilinear_crop_brute(x, theta, tau, tau2), atol=1e-12)


def test_out_of_frame_window_is_shifted_inside():
    x = rand_img(2)
    np.testing.assert_array_equal(apply_crop(x, CropParams(0.5, 1.0, 1.0)), apply_crop(x, CropParams(0.5, 0.5, 0.5)))


def test_color_examples():
    x = rand_img(3)
    np.testing.assert_array_equal(apply_color(x, ColorParams((1.0, 1.0, 1.0))), x)
    y = np.full((2, 2, 3), 0.3)
    out = apply_color(y, ColorParams((2.0, 1.0, 1.0)))
    np.testing.assert_allclose(out[..., 0], 0.6)
    np.testing.assert_array_equal(out[..., 1:], y[..., 1:])


def test_brightness_can_only_push_apart_with_b_above_one():
    rng = derive_rng(4)
    x, x2 = rng.random((4, 4, 3)), rng.random((4, 4, 3))
    b = 1.5
    grid = np.linspace(b / 20, b, 20)
    best = max(np.linalg.norm(x - apply_color(x2, ColorParams((l1, l2, l3))))
               for l1 in grid for l2 in grid for l3 in grid)
    assert best >= np.linalg.norm(x - x2)


@given(alpha=st.floats(0, 10), g=st.tuples(*[st.floats(0.01, 3)] * 3), seed=st.integers(0, 100))
def test_color_is_linear(alpha, g, seed):
    x = rand_img(seed, 4)
    p = ColorParams(g)
    np.testing.assert_allclose(apply_color(alpha * x, p), alpha * apply_color(x, p), rtol=1e-12, atol=1e-300)


def test_flip_and_gray():
    x = rand_img(5)
    np.testing.assert_array_equal(apply_flip(apply_flip(x)), x)
    g = apply_gray(x)
    np.testing.assert_array_equal(apply_gray(g), g)
    m = np.arange(12, dtype=float).reshape(2, 2, 3)
    np.testing.assert_array_equal(apply_flip(m), m[:, ::-1, :])
    np.testing.assert_array_equal(apply_flip(m)[0, 0], m[0, 1])


def test_semantic_map_crops():
    uniform = np.full((8, 8), 3)
    assert np.all(crop_semantic_map(uniform, CropParams(0.3, 0.2, 0.4)) == 3)
    img = sample_semantic_image(toy_config(side=8), 0, derive_rng(9))
    np.testing.assert_array_equal(crop_semantic_map(img.labels, CropParams(1.0)), img.labels)


@given(seed=st.integers(0, 10**5), c=st.integers(0, 3))
def test_small_window_inside_a_cell_is_single_semantic(seed, c):
    d = 8
    img = sample_semantic_image(toy_config(side=d), c, derive_rng(seed))
    # a window no larger than its cell, aligned to the cell corner
    for (r0, r1, c0, c1), s in img.cells:
        theta = min(r1 - r0, c1 - c0) / d
        out = crop_semantic_map(img.labels, CropParams(theta, r0 / d, c0 / d))
        assert np.all(out == s)
        assert label_stats(out) == ((s,), 0)


def test_replay_from_record_is_bit_exact():
    x = rand_img(6)
    for a in sample_augmentations(AugDistribution(), derive_rng(6), 20):
        again = Augmentation.from_dict(a.to_dict())
        assert again == a
        np.testing.assert_array_equal(apply(again, x), apply(a, x))


def test_batch_equals_single_application():
    x = rand_img(7)
    augs = sample_augmentations(AugDistribution(), derive_rng(7), 10)
    batch = apply_batch(x, augs)
    for a, out in zip(augs, batch):
        np.testing.assert_array_equal(apply(a, x), out)


def test_identity_record():
    assert IDENTITY.is_identity and IDENTITY.transforms == []


def test_invalid_parameters():
    with pytest.raises(ValueError):
        CropParams(0.0)
    with pytest.raises(ValueError):
        ColorParams((1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        AugDistribution(crop_scale=(0.5, 0.2))
    with pytest.raises(ValueError):
        AugDistribution(color_prob=1.5)
