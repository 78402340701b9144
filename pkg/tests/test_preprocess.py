import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from framecast.preprocess import PreprocessConfig, dataset_batch, preprocess
from framecast.scene import WorldSpec, generate_dataset

images = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)))


def gaussian_oracle(img, sigma):
    """Separable blur with an explicit kernel and mirrored padding."""
    radius = int(3.0 * sigma + 0.5)
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    out = img.astype(float)
    for axis in (0, 1):
        padded = np.pad(out, [(radius, radius) if a == axis else (0, 0) for a in (0, 1)], mode="symmetric")
        out = sum(w * np.take(padded, np.arange(i, i + out.shape[axis]), axis=axis) for i, w in enumerate(k))
    return out


@given(images)
def test_double_inversion_is_identity(img):
    cfg = PreprocessConfig(gaussian_sigma=0.0, invert=True, scale_to_unit=False)
    np.testing.assert_array_equal(preprocess(preprocess(img, cfg), cfg), img)


def test_white_frame_inverts_to_zero():
    out = preprocess(np.full((5, 5), 255, np.uint8))
    np.testing.assert_array_equal(out, 0.0)


def test_inversion_and_scaling_values():
    out = preprocess(np.array([[0, 51, 255]], np.uint8), PreprocessConfig(gaussian_sigma=0.0))
    np.testing.assert_allclose(out, [[1.0, 0.8, 0.0]], atol=1e-15)
    raw = preprocess(np.array([[0, 51, 255]], np.uint8), PreprocessConfig(0.0, invert=False, scale_to_unit=False))
    np.testing.assert_array_equal(raw, [[0, 51, 255]])


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(8, 20), st.integers(8, 20))), st.floats(0.3, 2.0))
def test_blur_matches_oracle_and_preserves_mean(img, sigma):
    cfg = PreprocessConfig(sigma, invert=False, scale_to_unit=False)
    out = preprocess(img, cfg)
    np.testing.assert_allclose(out, gaussian_oracle(img, sigma), atol=1e-9)
    assert abs(out.mean() - img.mean()) < 1e-9


def test_blur_acts_per_frame():
    stack = np.zeros((3, 9, 9), np.uint8)
    stack[1, 4, 4] = 255
    out = preprocess(stack, PreprocessConfig(1.0, invert=False, scale_to_unit=True))
    assert not out[0].any() and not out[2].any()
    assert out[1, 4, 4] < 1.0 and out[1, 4, 5] > 0


def test_pure_function():
    img = np.arange(16, dtype=np.uint8).reshape(4, 4)
    before = img.copy()
    a, b = preprocess(img), preprocess(img)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(img, before)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        PreprocessConfig(gaussian_sigma=-1.0)


def test_dataset_batch_and_copy_error_grows_with_horizon():
    ds = generate_dataset(WorldSpec(rows=16, cols=16, seed=2), episodes=200)
    batch = dataset_batch(ds)
    assert batch.inputs.shape == (200, 5, 16, 16)
    assert batch.inputs.min() >= 0 and batch.inputs.max() <= 1
    copy = np.mean((batch.targets - batch.inputs[:, -1:]) ** 2, axis=(0, 2, 3))
    assert np.all(np.diff(copy) > 0)
    empty = dataset_batch(ds, indices=[])
    assert len(empty) == 0
