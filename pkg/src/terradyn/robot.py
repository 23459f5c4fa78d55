"""Mass-point rigid-body robot model with tracks and kinematic flippers.

The robot is a set of body-frame points with masses and track labels.  The
body origin is the center of mass, so the torque sum in the rigid-body ODE
needs no parallel-axis correction.  Flippers are posed purely kinematically:
each is a labelled subset of points rotated about a fixed hinge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

HULL = "hull"
LEFT = "left"
RIGHT = "right"
FLIPPER_LABELS = ("flipper_1", "flipper_2", "flipper_3", "flipper_4")
# flipper_1 = front-left, flipper_2 = front-right,
# flipper_3 = rear-left,  flipper_4 = rear-right
LEFT_SIDE = (LEFT, "flipper_1", "flipper_3")
RIGHT_SIDE = (RIGHT, "flipper_2", "flipper_4")


@dataclass(frozen=True)
class FlipperState:
    """Hinge angles [rad] of the four flippers."""

    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(a)):
            raise ConfigError("flipper angles must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)

    @staticmethod
    def zero() -> "FlipperState":
        return FlipperState(np.zeros(4))


@dataclass(frozen=True)
class FlipperJoint:
    pivot: np.ndarray   # hinge point, body frame [m]
    axis: np.ndarray    # unit hinge axis, body frame
    indices: np.ndarray  # point indices belonging to this flipper


@dataclass(frozen=True)
class RobotModel:
    """Immutable mass-point robot body."""

    points: np.ndarray        # (N, 3) body frame, CoM at origin
    masses: np.ndarray        # (N,)
    labels: np.ndarray        # (N,) strings from the label vocabulary
    flipper_joints: tuple[FlipperJoint, ...]
    total_mass: float
    inertia: np.ndarray       # (3, 3) body frame about the origin

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        ms = np.ascontiguousarray(self.masses, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ConfigError(f"points must be (N>=1, 3), got {pts.shape}")
        if ms.shape != (pts.shape[0],) or np.any(ms <= 0):
            raise ConfigError("masses must be positive, one per point")
        if abs(ms.sum() - self.total_mass) > 1e-9 * max(1.0, self.total_mass):
            raise ConfigError("sum of point masses must equal total_mass")
        J = np.asarray(self.inertia, dtype=np.float64)
        if J.shape != (3, 3) or not np.allclose(J, J.T, atol=1e-9):
            raise ConfigError("inertia must be a symmetric 3x3 matrix")
        seen = set()
        for joint in self.flipper_joints:
            idx = set(np.asarray(joint.indices).tolist())
            if idx & seen:
                raise ConfigError("flipper index sets must be disjoint")
            seen |= idx
        for arr in (pts, ms):
            arr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", ms)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype="U12"))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def side_masks(self):
        """(left, right, track) boolean masks over points."""
        left = np.isin(self.labels, LEFT_SIDE)
        right = np.isin(self.labels, RIGHT_SIDE)
        return left, right, left | right

    def is_degenerate(self) -> bool:
        """True when inertia is not positive definite (e.g. a single point)."""
        return bool(np.min(np.linalg.eigvalsh(self.inertia)) <= 1e-12)


def mass_properties(points, masses):
    """Total mass and point-set inertia about the body origin.

    J = sum_i m_i (|p_i|^2 I - p_i p_i^T)
    """
    points = np.asarray(points, dtype=np.float64)
    masses = np.asarray(masses, dtype=np.float64)
    m = float(masses.sum())
    r2 = np.einsum("ij,ij->i", points, points)
    J = np.einsum("i,ij,ik->jk", masses, points, points)
    J = np.diag(np.full(3, float(np.dot(masses, r2)))) - J
    return m, J


def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def apply_flipper_angles(model: RobotModel, flippers: FlipperState) -> np.ndarray:
    """Posed body-frame point set; non-flipper points are returned unchanged."""
    posed = model.points.copy()
    for joint, angle in zip(model.flipper_joints, flippers.angles):
        if angle == 0.0 or joint.indices.size == 0:
            continue
        R = _rodrigues(joint.axis, float(angle))
        rel = model.points[joint.indices] - joint.pivot
        posed[joint.indices] = joint.pivot + rel @ R.T
    return posed


# --- point-sampled tracked robot ---------------------------------------------

@dataclass(frozen=True)
class TrackedRobotConfig:
    """Dimensions [m] of a box-approximated tracked robot with 4 flippers.

    Points are voxel centers on a lattice of the given spacing (one point per
    voxel of each body part).  The default configuration yields 223 points.
    """

    mass: float = 40.0
    spacing: float = 0.1
    hull_size: tuple[float, float, float] = (0.9, 0.5, 0.3)
    hull_center_z: float = 0.2
    track_size: tuple[float, float, float] = (0.7, 0.2, 0.2)
    track_gap_y: float = 0.6      # lateral distance between track centerlines
    track_center_z: float = 0.0
    flipper_size: tuple[float, float, float] = (0.4, 0.2, 0.1)
    flipper_axis_y: float = 0.85  # flipper centerline offset as fraction of track_gap_y

    def __post_init__(self):
        dims = ((self.mass, self.spacing)
                + self.hull_size + self.track_size + self.flipper_size
                + (self.track_gap_y,))
        if any(d <= 0 for d in dims):
            raise ConfigError("robot dimensions, spacing, and mass must be positive")


def _voxel_centers(size, spacing):
    counts = [max(1, int(round(s / spacing))) for s in size]
    axes = [(np.arange(n) - (n - 1) / 2.0) * spacing for n in counts]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def build_tracked_robot(config: TrackedRobotConfig = TrackedRobotConfig()) -> RobotModel:
    """Deterministic point-sampled tracked robot with 4 kinematic flippers."""
    c = config
    parts = []          # (points, label)
    joints_raw = []     # (pivot, axis, label)

    parts.append((_voxel_centers(c.hull_size, c.spacing)
                  + np.array([0.0, 0.0, c.hull_center_z]), HULL))
    for side, label in ((+1.0, LEFT), (-1.0, RIGHT)):
        offset = np.array([0.0, side * c.track_gap_y / 2.0, c.track_center_z])
        parts.append((_voxel_centers(c.track_size, c.spacing) + offset, label))

    fy = c.flipper_axis_y * c.track_gap_y / 2.0
    half_track = c.track_size[0] / 2.0
    for k, (fx_sign, side) in enumerate(((+1, +1), (+1, -1), (-1, +1), (-1, -1))):
        pivot = np.array([fx_sign * half_track, side * fy, c.track_center_z])
        center = pivot + np.array([fx_sign * c.flipper_size[0] / 2.0, 0.0, 0.0])
        parts.append((_voxel_centers(c.flipper_size, c.spacing) + center,
                      FLIPPER_LABELS[k]))
        joints_raw.append((pivot, np.array([0.0, 1.0, 0.0]), FLIPPER_LABELS[k]))

    points = np.concatenate([p for p, _ in parts], axis=0)
    labels = np.concatenate([[lbl] * len(p) for p, lbl in parts])
    n = len(points)
    if n < 4 or np.linalg.matrix_rank(points - points.mean(axis=0)) < 3:
        raise ConfigError("robot point set is degenerate: need >= 4 non-coplanar points")

    masses = np.full(n, c.mass / n)
    com = (masses[:, None] * points).sum(axis=0) / c.mass
    points = points - com

    joints = []
    for pivot, axis, lbl in joints_raw:
        joints.append(FlipperJoint(pivot=pivot - com, axis=axis,
                                   indices=np.flatnonzero(labels == lbl)))
    m, J = mass_properties(points, masses)
    return RobotModel(points=points, masses=masses, labels=labels,
                      flipper_joints=tuple(joints), total_mass=m, inertia=J)


def single_point_robot(mass: float = 40.0, inertia_scale: float = 1.0) -> RobotModel:
    """One point at the origin with a small isotropic inertia.

    Degenerate by design; useful for analytic contact tests where rotation is
    irrelevant.
    """
    return RobotModel(points=np.zeros((1, 3)), masses=np.array([mass]),
                      labels=np.array([LEFT]), flipper_joints=(),
                      total_mass=mass, inertia=np.eye(3) * inertia_scale)


# --- file format ---------------------------------------------------------------

def save_robot(path, model: RobotModel) -> None:
    doc = {
        "points": model.points.tolist(),
        "masses": model.masses.tolist(),
        "labels": model.labels.tolist(),
        "total_mass": model.total_mass,
        "inertia": model.inertia.tolist(),
        "flipper_joints": [
            {"pivot": j.pivot.tolist(), "axis": j.axis.tolist(),
             "indices": np.asarray(j.indices).tolist()}
            for j in model.flipper_joints
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_robot(path) -> RobotModel:
    with open(path) as f:
        doc = json.load(f)
    joints = tuple(
        FlipperJoint(pivot=np.array(j["pivot"]), axis=np.array(j["axis"]),
                     indices=np.array(j["indices"], dtype=np.intp))
        for j in doc["flipper_joints"])
    return RobotModel(points=np.array(doc["points"]), masses=np.array(doc["masses"]),
                      labels=np.array(doc["labels"]), flipper_joints=joints,
                      total_mass=doc["total_mass"], inertia=np.array(doc["inertia"]))
