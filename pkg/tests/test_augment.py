"""Augmentation pipeline: per-transform oracles, mask discipline, determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctiunet.augment import (AugmentSpec, TransformEntry, adjust_contrast,
                             affine, apply_pipeline, axis_flip,
                             default_augment_spec, gaussian_noise,
                             gaussian_smooth, grid_distortion, histogram_shift,
                             identity_augment_spec, rotate90, sample_rng,
                             shift_intensity, zoom)
from ctiunet.errors import ConfigurationError


def checker(h=16, w=16):
    rng = np.random.default_rng(0)
    img = rng.random((3, h, w))
    mask = np.zeros((1, h, w))
    mask[:, h // 4: 3 * h // 4, w // 4: 3 * w // 4] = 1.0
    return img, mask


def test_rotate90_hand_example():
    # [[a,b],[c,d]] counterclockwise once -> [[b,d],[a,c]]
    img = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    out_img, out_mask = rotate90(img, img.copy(), k=1)
    assert np.array_equal(out_img[0], [[2.0, 4.0], [1.0, 3.0]])
    assert np.array_equal(out_mask, out_img)
    # quarter turns compose: k=2 equals two k=1 turns, four turns are identity
    two = rotate90(*rotate90(img, img.copy(), k=1), k=1)[0]
    assert np.array_equal(rotate90(img, img.copy(), k=2)[0], two)
    three = rotate90(two, two.copy(), k=1)[0]
    assert np.array_equal(rotate90(three, three.copy(), k=1)[0], img)


def test_axis_flip_involution():
    img, mask = checker()
    for axis in (0, 1):
        i2, m2 = axis_flip(img, mask, axis=axis)
        i3, m3 = axis_flip(i2, m2, axis=axis)
        assert np.array_equal(i3, img) and np.array_equal(m3, mask)
        assert not np.array_equal(i2, img)


def test_zoom_area_scaling():
    img, mask = checker(32, 32)
    for factor in (0.9, 1.1):
        _, m2 = zoom(img, mask, factor=factor)
        got = m2.sum() / mask.sum()
        assert abs(got - factor ** 2) < 0.12, (factor, got)
        assert set(np.unique(m2)) <= {0.0, 1.0}


def test_affine_identity_at_zero():
    img, mask = checker()
    i2, m2 = affine(img, mask, rotate=0.0, scale=0.0, shear=0.0)
    assert np.allclose(i2, img, atol=1e-9)
    assert np.array_equal(m2, mask)


def test_affine_rotation_moves_content():
    img, mask = checker()
    i2, m2 = affine(img, mask, rotate=0.1, scale=0.0, shear=0.0)
    assert i2.shape == img.shape and m2.shape == mask.shape
    assert set(np.unique(m2)) <= {0.0, 1.0}
    assert not np.array_equal(i2, img)


def test_grid_distortion_identity_and_limits():
    img, mask = checker()
    zero = np.zeros((2, 5, 5))
    i2, m2 = grid_distortion(img, mask, disp=zero)
    assert np.allclose(i2, img, atol=1e-9)
    assert np.array_equal(m2, mask)
    rng = np.random.default_rng(1)
    i3, m3 = grid_distortion(img, mask, disp=rng.uniform(-0.5, 0.5, (2, 5, 5)))
    assert set(np.unique(m3)) <= {0.0, 1.0}


def test_gaussian_noise_statistics():
    img = np.full((3, 640, 640), 0.5)
    rng = np.random.default_rng(2)
    out = gaussian_noise(img, rng, mean=0.0, std=0.1)
    resid = out - img
    assert abs(resid.std() - 0.1) < 0.002
    assert abs(resid.mean()) < 0.002


def test_adjust_contrast_gamma():
    img = np.array([[[0.25, 1.0, 0.0]]])
    out = adjust_contrast(img, gamma=2.0)
    assert np.allclose(out, [[[0.0625, 1.0, 0.0]]])
    # values outside [0,1] are clipped before the power
    out2 = adjust_contrast(np.array([[[1.5]]]), gamma=2.0)
    assert out2.item() == 1.0


def test_shift_intensity_clamps():
    img = np.array([[[0.95, 0.5]]])
    out = shift_intensity(img, offset=0.15)
    assert np.allclose(out, [[[1.0, 0.65]]])


def test_histogram_shift_monotone():
    img = np.linspace(0, 1, 64).reshape(1, 8, 8)
    out = histogram_shift(img, control_y=np.array([0.1, 0.45, 0.95]))
    flat = out.ravel()
    assert (np.diff(flat) >= -1e-12).all()
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_gaussian_smooth_dc_and_smoothing():
    const = np.full((1, 9, 9), 0.37)
    out = gaussian_smooth(const, sigma=0.8)
    assert np.allclose(out, 0.37, atol=1e-12)
    spike = np.zeros((1, 9, 9))
    spike[0, 4, 4] = 1.0
    sm = gaussian_smooth(spike, sigma=1.0)
    assert abs(sm.sum() - 1.0) < 1e-9  # kernel is normalized
    assert sm[0, 4, 4] < 1.0 and sm[0, 4, 3] > 0.0


def test_default_spec_matches_schedule():
    spec = default_augment_spec(master_seed=0)
    kinds = [t.kind for t in spec.transforms]
    assert kinds == ["rotate90", "zoom", "axis_flip", "affine", "grid_distortion",
                     "gaussian_noise", "adjust_contrast", "shift_intensity",
                     "histogram_shift", "gaussian_smooth"]
    probs = {t.kind: t.p for t in spec.transforms}
    assert probs["gaussian_noise"] == 0.2
    assert all(p == 0.5 for k, p in probs.items() if k != "gaussian_noise")


def test_entry_validation():
    with pytest.raises(ConfigurationError):
        TransformEntry(kind="melt", p=0.5, params={})
    with pytest.raises(ConfigurationError):
        TransformEntry(kind="zoom", p=1.5, params={})


def test_pipeline_deterministic_per_indices():
    img, mask = checker()
    spec = default_augment_spec(master_seed=7)
    a = apply_pipeline(img, mask, spec, sample_index=3, epoch=2)
    b = apply_pipeline(img, mask, spec, sample_index=3, epoch=2)
    c = apply_pipeline(img, mask, spec, sample_index=4, epoch=2)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    assert a.log == b.log
    assert not np.array_equal(a.image, c.image)


def test_identity_spec_passthrough():
    img, mask = checker()
    spec = identity_augment_spec()
    out = apply_pipeline(img, mask, spec, sample_index=0, epoch=0)
    assert np.array_equal(out.image, img)
    assert np.array_equal(out.mask, mask)
    assert out.log == []


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 200), st.integers(0, 50))
def test_pipeline_mask_stays_binary_and_in_range(seed, index, epoch):
    img, mask = checker(8, 8)
    spec = default_augment_spec(master_seed=seed)
    out = apply_pipeline(img, mask, spec, sample_index=index, epoch=epoch)
    assert out.image.shape == img.shape and out.mask.shape == mask.shape
    assert set(np.unique(out.mask)) <= {0.0, 1.0}
    # additive noise is deliberately unclipped, so only finiteness holds
    assert np.isfinite(out.image).all()


def test_sample_rng_streams_independent():
    a = sample_rng(1, 2, 3).random(5)
    b = sample_rng(1, 2, 3).random(5)
    c = sample_rng(1, 2, 4).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
