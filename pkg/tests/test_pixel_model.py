import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from augbound._seeding import derive_rng
from augbound.pixel_model import (GenerativeConfig, analytic_delta_mu, analytic_sigma, from_float32_bytes,
                                  guillotine_partition, sample_dataset, sample_semantic_image, to_float32_bytes,
                                  toy_config, truncated_moments, write_pgm, write_ppm)


def small_config(std=0.1, side=8):
    return GenerativeConfig(
        class_prior=[0.5, 0.5],
        semantic_prob=[[0.9, 0.2, 1.0], [0.1, 0.8, 1.0]],
        channel_mean=[[0.8, 0.1, 0.1], [0.1, 0.7, 0.2], [0.3, 0.3, 0.3]],
        channel_std=np.full((3, 3), std),
        side=side,
    )


def test_background_only_gives_uniform_map():
    cfg = GenerativeConfig([1.0], [[1.0]], [[0.4, 0.4, 0.4]], [[0.1, 0.1, 0.1]], side=6)
    img = sample_semantic_image(cfg, 0, derive_rng(3))
    assert np.all(img.labels == 0)


def test_zero_variance_pixels_equal_means():
    cfg = small_config(std=0.0)
    img = sample_semantic_image(cfg, 1, derive_rng(5))
    np.testing.assert_array_equal(img.image, cfg.channel_mean[img.labels])


def test_partition_rectangles_one_per_active_semantic():
    cfg = small_config(side=8)
    img = sample_semantic_image(cfg, 0, derive_rng(7))
    present = np.unique(img.labels)
    assert len(img.cells) == present.size
    covered = np.zeros((8, 8), dtype=int)
    for (r0, r1, c0, c1), s in img.cells:
        covered[r0:r1, c0:c1] += 1
        assert np.all(img.labels[r0:r1, c0:c1] == s)
    assert np.all(covered == 1)
    assert cfg.background in present


def test_region_pixels_follow_truncated_gaussian():
    cfg = small_config(std=0.1, side=8)
    pixels = {s: [] for s in range(3)}
    for j in range(40):
        img = sample_semantic_image(cfg, j % 2, derive_rng(7, j))
        for s in range(3):
            pixels[s].append(img.image[img.labels == s][:, 0])
    for s in range(3):
        x = np.concatenate(pixels[s])
        if x.size < 50:
            continue
        mu, sd = cfg.channel_mean[s, 0], cfg.channel_std[s, 0]
        law = stats.truncnorm(-mu / sd, np.inf, loc=mu, scale=sd)
        assert stats.kstest(x, law.cdf).pvalue > 1e-3
        # sample mean within 4 standard errors of the truncated mean
        assert abs(x.mean() - law.mean()) < 4 * law.std() / math.sqrt(x.size)


def test_truncated_moments_match_scipy():
    cfg = small_config(std=0.5)
    mean, std = truncated_moments(cfg, 2)
    law = stats.truncnorm(-0.3 / 0.5, np.inf, loc=0.3, scale=0.5)
    np.testing.assert_allclose(mean, law.mean())
    np.testing.assert_allclose(std, law.std())


def test_determinism_and_dataset_order():
    cfg = toy_config()
    a = sample_semantic_image(cfg, 2, derive_rng(11))
    b = sample_semantic_image(cfg, 2, derive_rng(11))
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.labels, b.labels)
    data = sample_dataset(cfg, 3, seed=1)
    assert [s.class_label for s in data] == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]


def test_invalid_class_and_config():
    with pytest.raises(ValueError):
        sample_semantic_image(small_config(), 2, derive_rng(0))
    with pytest.raises(ValueError, match="sum to 1"):
        GenerativeConfig([0.5, 0.6], [[1.0], [1.0]], [[0, 0, 0]], [[0, 0, 0]])
    with pytest.raises(ValueError, match="background"):
        GenerativeConfig([1.0], [[0.5]], [[0, 0, 0]], [[0, 0, 0]])


def test_analytic_sigma_examples():
    cfg = GenerativeConfig([1.0], [[1.0]], [[0, 0, 0]], [[0.0, 0.0, 0.0]], side=8)
    assert analytic_sigma(cfg, 0) == 0.0
    cfg1 = GenerativeConfig([1.0], [[1.0]], [[0, 0, 0]], [[1.0, 0.0, 0.0]], side=2)
    assert analytic_sigma(cfg1, 0, side=1) == 1.0
    cfg8 = GenerativeConfig([1.0], [[1.0]], [[0, 0, 0]], [[0.1, 0.1, 0.1]], side=8)
    assert analytic_sigma(cfg8, 0) == pytest.approx(8 * 0.1 * math.sqrt(3))
    assert analytic_sigma(cfg8, 0) == pytest.approx(1.3856, abs=1e-4)


def test_analytic_delta_mu_examples():
    cfg = GenerativeConfig([1.0], [[0.5, 0.5, 1.0]], [[1, 0, 0], [0, 0, 0], [0.5, 0.5, 0.5]], np.zeros((3, 3)))
    assert analytic_delta_mu(cfg, 0, 0) == 0.0
    assert analytic_delta_mu(cfg, 0, 1) == 1.0
    cfg2 = GenerativeConfig([1.0], [[0.5, 1.0]], [[0.5, 0.5, 0.5], [0.2, 0.2, 0.2]], np.zeros((2, 3)))
    assert analytic_delta_mu(cfg2, 0, 1) == pytest.approx(0.3 * math.sqrt(3))


@given(side=st.integers(2, 12), n=st.integers(1, 20), seed=st.integers(0, 10**6))
def test_guillotine_partition_tiles_grid(side, n, seed):
    n = min(n, side * side)
    cells = guillotine_partition(side, n, derive_rng(seed))
    assert len(cells) == n
    cover = np.zeros((side, side), dtype=int)
    for r0, r1, c0, c1 in cells:
        assert r1 > r0 and c1 > c0
        cover[r0:r1, c0:c1] += 1
    assert np.all(cover == 1)


@given(seed=st.integers(0, 10**6), c=st.integers(0, 3))
def test_labels_present_are_active_and_pixels_nonnegative(seed, c):
    cfg = toy_config(side=8)
    img = sample_semantic_image(cfg, c, derive_rng(seed))
    present = set(np.unique(img.labels).tolist())
    allowed = set(np.flatnonzero(cfg.semantic_prob[c] > 0).tolist())
    assert present <= allowed
    assert np.all(img.image >= 0)


def test_config_round_trip():
    cfg = toy_config()
    again = GenerativeConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


def test_exports(tmp_path):
    img = sample_semantic_image(small_config(), 0, derive_rng(1))
    buf = to_float32_bytes(img.image)
    assert len(buf) == 8 * 8 * 3 * 4
    np.testing.assert_allclose(from_float32_bytes(buf, 8), img.image.astype(np.float32))
    write_ppm(tmp_path / "x.ppm", img.image)
    write_pgm(tmp_path / "x.pgm", img.labels)
    assert (tmp_path / "x.ppm").read_bytes().startswith(b"P6\n8 8\n255\n")
    assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5\n8 8\n255\n")
