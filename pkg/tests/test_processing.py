import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bubbledyn.exceptions import ShapeError
from bubbledyn.processing import (
    DEFAULT_CAMERA_OFFSET,
    DEFAULT_PIXEL_PITCH,
    crop_raw,
    deformation_map,
    downsample,
    upsample,
    process_raw,
    make_camera_pair,
    depth_to_pointcloud,
)

pooled_maps = arrays(
    np.float64,
    (2, 25, 20),
    elements=st.floats(-0.05, 0.05, allow_nan=False),
)


def test_crop_shape_and_offset():
    raw = np.zeros((2, 224, 171))
    raw[:, 24, 15] = 1.0
    cropped = crop_raw(raw)
    assert cropped.shape == (2, 175, 140)
    assert cropped[0, 0, 0] == 1.0
    assert cropped.sum() == 2.0


def test_crop_constant():
    np.testing.assert_array_equal(
        crop_raw(np.full((2, 224, 171), 0.7)), np.full((2, 175, 140), 0.7)
    )


def test_crop_wrong_shape():
    with pytest.raises(ShapeError):
        crop_raw(np.zeros((2, 175, 140)))


def test_deformation_map(rng):
    ref = rng.random((2, 175, 140))
    meas = rng.random((2, 175, 140))
    np.testing.assert_array_equal(deformation_map(ref, ref), 0.0)
    np.testing.assert_allclose(deformation_map(ref + 0.003, ref), 0.003)
    expected = np.empty_like(ref)
    for index in np.ndindex(ref.shape):
        expected[index] = meas[index] - ref[index]
    np.testing.assert_array_equal(deformation_map(meas, ref), expected)
    with pytest.raises(ShapeError):
        deformation_map(meas, ref[:, :-1])


def test_downsample_block_mean():
    maps = np.zeros((2, 175, 140))
    maps[0, :7, :7] = np.arange(1, 50).reshape(7, 7)
    pooled = downsample(maps)
    assert pooled.shape == (2, 25, 20)
    assert pooled[0, 0, 0] == pytest.approx(25.0)
    assert np.count_nonzero(pooled) == 1
    np.testing.assert_allclose(downsample(np.full((2, 175, 140), 0.3)), 0.3)


def test_downsample_indivisible():
    with pytest.raises(ShapeError):
        downsample(np.zeros((2, 174, 140)))


@settings(max_examples=25)
@given(pooled_maps, pooled_maps, st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_downsample_is_linear(x, y, alpha, beta):
    x = upsample(x)
    y = upsample(y)
    np.testing.assert_allclose(
        downsample(alpha * x + beta * y),
        alpha * downsample(x) + beta * downsample(y),
        atol=1e-6,
    )


def test_upsample_constant_is_exact():
    maps = np.full((2, 25, 20), 0.0042)
    np.testing.assert_allclose(upsample(maps), 0.0042, rtol=0.0, atol=1e-15)


@settings(max_examples=25)
@given(pooled_maps)
def test_pooling_inverts_block_constant_maps(maps):
    block = np.repeat(np.repeat(maps, 7, axis=1), 7, axis=2)
    np.testing.assert_allclose(downsample(block), maps, atol=1e-12)


def test_upsample_keeps_ramp_in_interior():
    rows = np.arange(25, dtype=np.float64)[:, None] * np.ones((1, 20))
    maps = np.stack([rows, 2.0 * rows])
    full = upsample(maps)
    # cell centers of the full grid in pooled cell units
    centers = (np.arange(175) + 0.5) / 7.0 - 0.5
    interior = (centers >= 0.0) & (centers <= 24.0)
    np.testing.assert_allclose(full[0, interior, 5], centers[interior])
    np.testing.assert_allclose(full[1, interior, 5], 2.0 * centers[interior])


def test_upsample_wrong_shape():
    with pytest.raises(ShapeError):
        upsample(np.zeros((2, 24, 20)))


def test_pipeline_shape_chain(rng):
    ref = rng.random((2, 224, 171))
    full, pooled = process_raw(ref + 0.001, ref)
    assert full.shape == (2, 175, 140)
    assert pooled.shape == (2, 25, 20)
    assert upsample(pooled).shape == (2, 175, 140)
    np.testing.assert_allclose(pooled, 0.001)


def test_zero_deformation_lies_on_membranes():
    cloud = depth_to_pointcloud(np.zeros((2, 175, 140)), make_camera_pair())
    assert cloud.points.shape == (2 * 175 * 140, 3)
    np.testing.assert_allclose(
        np.abs(cloud.points[:, 0]), DEFAULT_CAMERA_OFFSET
    )
    np.testing.assert_array_equal(cloud.values, 0.0)


def test_single_pixel_projection():
    maps = np.zeros((2, 175, 140))
    maps[0, 87, 70] = 0.004
    mask = maps > 0.0
    cloud = depth_to_pointcloud(maps, make_camera_pair(), mask)
    assert cloud.points.shape == (1, 3)
    np.testing.assert_allclose(
        cloud.points[0],
        (DEFAULT_CAMERA_OFFSET + 0.004, 0.5 * DEFAULT_PIXEL_PITCH, 0.0),
        atol=1e-12,
    )
    assert cloud.values.tolist() == [0.004]


def test_identical_maps_project_symmetrically(rng):
    single = rng.uniform(0.0, 0.005, (175, 140))
    cloud = depth_to_pointcloud(
        np.stack([single, single]), make_camera_pair()
    )
    count = 175 * 140
    left = cloud.points[:count]
    right = cloud.points[count:]
    np.testing.assert_allclose(right, left * (-1.0, -1.0, 1.0), atol=1e-12)
