import numpy as np
import pytest

from terradyn import GridSpec
from terradyn.errors import ConfigError, NonPositiveDepthError
from terradyn.liftsplat import (
    CameraIntrinsics,
    LiftedFeatureCloud,
    lift_pixel,
    pointcloud_to_heightmap,
    project_pixel,
    splat,
)

CAM = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0)
SPEC = GridSpec((0.0, 0.0), 0.1, 16, 16)


def test_principal_point_ray():
    P = lift_pixel(CAM, 320.0, 240.0, 2.0)
    np.testing.assert_allclose(P, [0.0, 0.0, 2.0], atol=1e-12)


def test_offset_pixel_algebra():
    P = lift_pixel(CAM, 320.0 + 500.0, 240.0, 1.0)
    np.testing.assert_allclose(P, [1.0, 0.0, 1.0], atol=1e-12)


def test_depth_linearity():
    P1 = lift_pixel(CAM, 411.0, 290.0, 1.3)
    P2 = lift_pixel(CAM, 411.0, 290.0, 2.6)
    np.testing.assert_allclose(P2, 2.0 * P1, atol=0)


def test_nonpositive_depth_rejected():
    with pytest.raises(NonPositiveDepthError):
        lift_pixel(CAM, 320.0, 240.0, 0.0)
    with pytest.raises(NonPositiveDepthError):
        lift_pixel(CAM, 320.0, 240.0, -1.0)


def test_lift_project_roundtrip():
    rng = np.random.default_rng(4)
    u = rng.uniform(0, 640, 200)
    v = rng.uniform(0, 480, 200)
    d = rng.uniform(0.1, 20.0, 200)
    P = lift_pixel(CAM, u, v, d)
    u2, v2, d2 = project_pixel(CAM, P)
    np.testing.assert_allclose(u2, u, atol=1e-9)
    np.testing.assert_allclose(v2, v, atol=1e-9)
    np.testing.assert_allclose(d2, d, atol=1e-9)


def test_intrinsics_matrix_roundtrip():
    K = CAM.K
    cam2 = CameraIntrinsics.from_matrix(K)
    assert cam2 == CAM
    with pytest.raises(ConfigError):
        CameraIntrinsics.from_matrix(np.ones((3, 3)))


def test_extrinsic_transform():
    T = np.eye(4)
    T[:3, 3] = [1.0, 2.0, 3.0]
    P = lift_pixel(CAM, 320.0, 240.0, 2.0, extrinsic=T)
    np.testing.assert_allclose(P, [1.0, 2.0, 5.0], atol=1e-12)


def cloud(points, probs, features):
    return LiftedFeatureCloud(np.asarray(points, dtype=np.float64),
                              np.asarray(probs, dtype=np.float64),
                              np.asarray(features, dtype=np.float64))


def test_splat_singleton():
    res = splat(cloud([[0.5, 0.3, 0.1]], [1.0], [[7.0]]), SPEC)
    r, c = 3, 5
    assert res.features[r, c, 0] == 7.0
    assert res.occupied[r, c]
    assert res.occupied.sum() == 1


def test_splat_weighted_mean_oracle():
    res = splat(cloud([[0.5, 0.3, 0.0], [0.52, 0.31, 0.0]], [1.0, 3.0],
                      [[0.0], [4.0]]), SPEC)
    assert res.features[3, 5, 0] == pytest.approx(3.0, abs=1e-12)
    assert res.weights[3, 5] == pytest.approx(4.0, abs=1e-12)


def test_splat_zero_probs_all_empty():
    res = splat(cloud([[0.5, 0.3, 0.0]], [0.0], [[4.0]]), SPEC)
    assert not res.occupied.any()
    assert np.all(np.isfinite(res.features))


def test_splat_permutation_invariance():
    rng = np.random.default_rng(8)
    pts = rng.uniform(0.0, 1.5, (500, 3))
    p = rng.uniform(0.0, 1.0, 500)
    f = rng.normal(size=(500, 2))
    a = splat(cloud(pts, p, f), SPEC)
    perm = rng.permutation(500)
    b = splat(cloud(pts[perm], p[perm], f[perm]), SPEC)
    np.testing.assert_allclose(a.features, b.features, atol=1e-9)
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-9)


def test_splat_weight_conservation_and_drops():
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1.0, 2.5, (800, 3))  # some points fall off the grid
    p = rng.uniform(0.0, 1.0, 800)
    f = rng.normal(size=(800, 1))
    res = splat(cloud(pts, p, f), SPEC)
    assert res.weights.sum() + res.dropped_weight == pytest.approx(p.sum(),
                                                                   rel=1e-12)
    assert res.dropped > 0


def test_per_pixel_probability_budget():
    with pytest.raises(ConfigError):
        LiftedFeatureCloud(np.zeros((2, 3)), np.array([0.7, 0.7]),
                           np.zeros((2, 1)), pixel_ids=np.array([0, 0]))


def test_heightmap_single_point_and_max():
    pts = np.array([[0.5, 0.3, 0.2]])
    h, mask = pointcloud_to_heightmap(pts, SPEC)
    assert h[3, 5] == pytest.approx(0.2)
    assert mask[3, 5] and mask.sum() == 1
    pts3 = np.array([[0.5, 0.3, 0.0], [0.5, 0.3, 0.0], [0.5, 0.3, 1.0]])
    h, _ = pointcloud_to_heightmap(pts3, SPEC, percentile=100.0)
    assert h[3, 5] == 1.0


def test_heightmap_plane_oracle():
    rng = np.random.default_rng(10)
    pts = rng.uniform(0.05, 1.45, (4000, 2))
    z = 0.3 * pts[:, 0] - 0.1 * pts[:, 1]
    cloudpts = np.column_stack([pts, z])
    h, mask = pointcloud_to_heightmap(cloudpts, SPEC, percentile=50.0)
    cols, rows = np.meshgrid(np.arange(16), np.arange(16))
    plane = 0.3 * cols * 0.1 - 0.1 * rows * 0.1
    # cell centers vs percentile of nearby samples: bounded by the plane's
    # variation across half a cell (0.02 m) plus sampling noise
    assert np.max(np.abs(h[mask] - plane[mask])) <= 0.025
    # mask covers exactly the touched cells
    touched = np.zeros((16, 16), dtype=bool)
    touched[np.clip(np.round(pts[:, 1] / 0.1).astype(int), 0, 15),
            np.clip(np.round(pts[:, 0] / 0.1).astype(int), 0, 15)] = True
    np.testing.assert_array_equal(mask, touched)
