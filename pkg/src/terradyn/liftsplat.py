"""Geometric lift-splat: pixel-ray lifting and grid-cell feature splatting.

Purely geometric — features are caller-supplied channels; there is no learned
encoder here.  Splat accumulation runs cell-major in ascending index order,
so results are deterministic and independent of input ordering up to exact
floating-point summation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonPositiveDepthError
from .terrain import GridSpec


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with zero skew."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be > 0")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @staticmethod
    def from_matrix(K) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=np.float64)
        if K.shape != (3, 3) or abs(K[0, 1]) > 1e-12 or \
                np.any(np.abs(K[2] - (0, 0, 1)) > 1e-12):
            raise ConfigError("K must be an upper-triangular pinhole matrix")
        return CameraIntrinsics(K[0, 0], K[1, 1], K[0, 2], K[1, 2])


def lift_pixel(cam: CameraIntrinsics, u, v, d, extrinsic=None) -> np.ndarray:
    """P = d * K^-1 [u, v, 1]^T, optionally mapped by a 4x4 camera-to-grid pose.

    Vectorized over equal-shaped u, v, d; returns (..., 3).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise NonPositiveDepthError("depth must be > 0")
    P = np.stack([(u - cam.cx) / cam.fx * d, (v - cam.cy) / cam.fy * d, d],
                 axis=-1)
    if extrinsic is not None:
        T = np.asarray(extrinsic, dtype=np.float64)
        if T.shape != (4, 4):
            raise ConfigError("extrinsic must be 4x4")
        P = P @ T[:3, :3].T + T[:3, 3]
    return P


def project_pixel(cam: CameraIntrinsics, P) -> tuple:
    """Inverse of lift_pixel (camera frame): (u, v, d)."""
    P = np.asarray(P, dtype=np.float64)
    d = P[..., 2]
    return (cam.fx * P[..., 0] / d + cam.cx,
            cam.fy * P[..., 1] / d + cam.cy, d)


@dataclass(frozen=True)
class LiftedFeatureCloud:
    """Per-(pixel, depth-bin) points with probabilities and feature channels."""

    points: np.ndarray       # (N, 3), grid frame
    probs: np.ndarray        # (N,), >= 0
    features: np.ndarray     # (N, C)
    pixel_ids: np.ndarray | None = None  # (N,), optional provenance

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        probs = np.asarray(self.probs, dtype=np.float64).ravel()
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[:, None]
        if not (len(pts) == len(probs) == len(feats)):
            raise ConfigError("points, probs, and features must have equal length")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ConfigError("probabilities must be finite and >= 0")
        if self.pixel_ids is not None:
            pid = np.asarray(self.pixel_ids)
            if len(pid) != len(pts):
                raise ConfigError("pixel_ids length mismatch")
            # per-pixel probabilities must form a (sub-)distribution
            sums = np.zeros(int(pid.max()) + 1 if len(pid) else 0)
            np.add.at(sums, pid, probs)
            if np.any(sums > 1.0 + 1e-6):
                raise ConfigError("per-pixel probabilities sum above 1")
            object.__setattr__(self, "pixel_ids", pid)
        for name, val in (("points", pts), ("probs", probs), ("features", feats)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_points(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class SplatResult:
    features: np.ndarray     # (rows, cols, C) weighted means; 0 where empty
    weights: np.ndarray      # (rows, cols) sum of probabilities
    occupied: np.ndarray     # (rows, cols) bool, weight > 0
    dropped: int             # points outside the grid
    dropped_weight: float    # their probability mass


def _cell_indices(spec: GridSpec, xy: np.ndarray):
    """Nearest-cell index per point and an in-bounds mask."""
    gx = (xy[:, 0] - spec.origin_xy[0]) / spec.resolution
    gy = (xy[:, 1] - spec.origin_xy[1]) / spec.resolution
    ix = np.round(gx).astype(np.intp)
    iy = np.round(gy).astype(np.intp)
    inside = (ix >= 0) & (ix < spec.cols) & (iy >= 0) & (iy < spec.rows)
    return iy, ix, inside


def splat(cloud: LiftedFeatureCloud, spec: GridSpec) -> SplatResult:
    """Probability-weighted per-cell feature means by vertical projection.

    phi_j = sum_{i in cell j} p_i * Phi_i / sum p_i; zero-weight cells are
    flagged empty.  Out-of-grid points are dropped and counted.  Accumulation
    is cell-major in ascending flat-index order.
    """
    iy, ix, inside = _cell_indices(spec, cloud.points[:, :2])
    dropped = int(np.count_nonzero(~inside))
    dropped_weight = float(cloud.probs[~inside].sum())
    flat = iy[inside] * spec.cols + ix[inside]
    order = np.argsort(flat, kind="stable")
    flat = flat[order]
    p = cloud.probs[inside][order]
    f = cloud.features[inside][order]

    n_cells = spec.rows * spec.cols
    C = cloud.features.shape[1]
    wsum = np.zeros(n_cells)
    fsum = np.zeros((n_cells, C))
    np.add.at(wsum, flat, p)
    np.add.at(fsum, flat, p[:, None] * f)
    occupied = wsum > 0
    feats = np.zeros_like(fsum)
    feats[occupied] = fsum[occupied] / wsum[occupied, None]
    return SplatResult(feats.reshape(spec.rows, spec.cols, C),
                       wsum.reshape(spec.shape()),
                       occupied.reshape(spec.shape()),
                       dropped, dropped_weight)


def pointcloud_to_heightmap(points, spec: GridSpec, percentile: float = 90.0,
                            aggregator=None) -> tuple:
    """Rasterize an (N, 3) cloud to a height grid plus a validity mask.

    Default aggregation takes the ``percentile``-th percentile of each cell's
    z values (rejects below-ground noise); pass ``aggregator`` (callable on a
    1-D array) to override.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 1:
        raise ConfigError("need at least one point")
    iy, ix, inside = _cell_indices(spec, points[:, :2])
    flat = iy[inside] * spec.cols + ix[inside]
    z = points[inside, 2]
    order = np.argsort(flat, kind="stable")
    flat, z = flat[order], z[order]

    heights = np.zeros(spec.rows * spec.cols)
    mask = np.zeros(spec.rows * spec.cols, dtype=bool)
    agg = aggregator if aggregator is not None else \
        (lambda zs: np.percentile(zs, percentile))
    starts = np.searchsorted(flat, np.unique(flat))
    bounds = np.append(starts, len(flat))
    for k, cell in enumerate(np.unique(flat)):
        heights[cell] = agg(z[bounds[k]:bounds[k + 1]])
        mask[cell] = True
    return heights.reshape(spec.shape()), mask.reshape(spec.shape())
