"""File formats: trajectory CSV/NPZ, scenario JSON, camera and cloud files.

All writers go through an atomic temp-file + rename so partially written
artifacts never appear under the target name.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlStep, PhysicsConfig, RigidState, Trajectory
from .errors import ConfigError
from .liftsplat import CameraIntrinsics
from .robot import FlipperState, RobotModel, build_tracked_robot, load_robot
from .terrain import GridSpec, TerrainGrid, load_grid, load_grid_csv
from .worlds import generate_world

TRAJ_COLUMNS = ("t_s", "x_m", "y_m", "z_m", "qw", "qx", "qy", "qz",
                "vx_mps", "vy_mps", "vz_mps",
                "wx_radps", "wy_radps", "wz_radps")


def atomic_write(path, data: bytes | str) -> None:
    """Write to a temp file in the target directory, then rename into place."""
    path = os.fspath(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0)) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_rotation(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


def trajectory_csv(traj: Trajectory) -> str:
    """Self-describing CSV: one row per state (t, x, quaternion, v, omega)."""
    import io

    buf = io.StringIO()
    buf.write("# terradyn trajectory: positions [m], quaternion (w,x,y,z), "
              "linear velocity [m/s], body rates [rad/s]\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJ_COLUMNS)
    for i, t in enumerate(traj.times):
        q = rotation_to_quat(traj.Rs[i])
        w.writerow([f"{val:.17g}" for val in
                    (t, *traj.xs[i], *q, *traj.vs[i], *traj.ws[i])])
    return buf.getvalue()


def save_trajectory_csv(path, traj: Trajectory) -> None:
    atomic_write(path, trajectory_csv(traj))


def load_trajectory_csv(path) -> Trajectory:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == TRAJ_COLUMNS[0]:
                continue
            rows.append([float(v) for v in row])
    if not rows:
        raise ConfigError(f"no trajectory rows in {path}")
    arr = np.asarray(rows)
    if arr.shape[1] != len(TRAJ_COLUMNS):
        raise ConfigError(f"expected {len(TRAJ_COLUMNS)} columns in {path}")
    Rs = np.stack([quat_to_rotation(q) for q in arr[:, 4:8]])
    return Trajectory(times=arr[:, 0], xs=arr[:, 1:4], vs=arr[:, 8:11],
                      Rs=Rs, ws=arr[:, 11:14],
                      normal_force_sum=np.zeros((len(arr) - 1, 3)))


def save_trajectory_npz(path, traj: Trajectory) -> None:
    """Binary variant retaining per-point force tensors when present."""
    payload = {"times": traj.times, "xs": traj.xs, "vs": traj.vs,
               "Rs": traj.Rs, "ws": traj.ws,
               "normal_force_sum": traj.normal_force_sum}
    for name in ("point_normals", "point_frictions", "contacts"):
        val = getattr(traj, name)
        if val is not None:
            payload[name] = val
    import io

    buf = io.BytesIO()
    np.savez_compressed(buf, **payload)
    atomic_write(path, buf.getvalue())


def load_trajectory_npz(path) -> Trajectory:
    with np.load(path) as z:
        kw = {k: z[k] for k in z.files}
    return Trajectory(**kw)


# --- scenario files ----------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Everything a CLI subcommand needs, resolved from one JSON file."""

    grid: TerrainGrid
    robot: RobotModel
    state0: RigidState
    schedule: list                        # ControlSteps
    dt: float = 0.01
    horizon: float = 5.0
    seed: int = 0
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    waypoints: tuple = ()
    raw: dict = field(default_factory=dict)


def _control_from_dict(d: dict) -> ControlStep:
    flips = FlipperState(np.asarray(d.get("flippers", (0.0,) * 4), dtype=np.float64))
    return ControlStep(float(d["u_left"]), float(d["u_right"]),
                       float(d["duration"]), flips)


def load_scenario(path, seed_override=None) -> Scenario:
    """Parse a scenario JSON; relative file references resolve next to it."""
    with open(path) as fh:
        raw = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    seed = int(raw.get("seed", 0)) if seed_override is None else int(seed_override)

    g = raw.get("grid", {"kind": "flat", "rows": 64, "cols": 64})
    if "file" in g:
        fname = resolve(g["file"])
        if not os.path.exists(fname):
            raise ConfigError(f"grid file not found: {fname}")
        grid = load_grid_csv(fname) if fname.endswith(".csv") else load_grid(fname)
    else:
        spec = GridSpec(tuple(g.get("origin_xy", (0.0, 0.0))),
                        float(g.get("resolution", 0.1)),
                        int(g.get("rows", 64)), int(g.get("cols", 64)))
        params = {k: v for k, v in g.items()
                  if k not in ("kind", "origin_xy", "resolution", "rows",
                               "cols", "seed", "oob_policy")}
        grid = generate_world(g.get("kind", "flat"), spec,
                              seed=int(g.get("seed", seed)),
                              oob_policy=g.get("oob_policy", "clamp"), **params)

    r = raw.get("robot", {})
    if "file" in r:
        fname = resolve(r["file"])
        if not os.path.exists(fname):
            raise ConfigError(f"robot file not found: {fname}")
        robot = load_robot(fname)
    else:
        from .robot import TrackedRobotConfig
        cfg_kw = {k: tuple(v) if isinstance(v, list) else v
                  for k, v in r.items()}
        try:
            robot = build_tracked_robot(TrackedRobotConfig(**cfg_kw))
        except TypeError as exc:
            raise ConfigError(f"bad robot config: {exc}") from exc

    s = raw.get("state0", {})
    state0 = RigidState(
        np.asarray(s.get("x", (0.0, 0.0, 0.0)), dtype=np.float64),
        np.asarray(s.get("v", (0.0, 0.0, 0.0)), dtype=np.float64),
        quat_to_rotation(s["q"]) if "q" in s
        else RigidState.rest(yaw=float(s.get("yaw", 0.0))).R,
        np.asarray(s.get("omega", (0.0, 0.0, 0.0)), dtype=np.float64))

    horizon = float(raw.get("horizon", 5.0))
    sched_raw = raw.get("schedule",
                        [{"u_left": 0.0, "u_right": 0.0, "duration": horizon}])
    schedule = [_control_from_dict(d) for d in sched_raw]

    phys_kw = raw.get("physics", {})
    physics = PhysicsConfig(**phys_kw)

    return Scenario(grid=grid, robot=robot, state0=state0, schedule=schedule,
                    dt=float(raw.get("dt", 0.01)), horizon=horizon, seed=seed,
                    physics=physics,
                    waypoints=tuple(tuple(map(float, wp))
                                    for wp in raw.get("waypoints", ())),
                    raw=raw)


# --- camera / cloud files ------------------------------------------------------

def load_camera(path):
    """JSON with a 3x3 K matrix and optional 4x4 camera-to-grid extrinsic."""
    with open(path) as fh:
        d = json.load(fh)
    cam = CameraIntrinsics.from_matrix(np.asarray(d["K"], dtype=np.float64))
    ext = np.asarray(d["extrinsic"], dtype=np.float64) if "extrinsic" in d else None
    return cam, ext


def load_cloud_csv(path):
    """CSV of x,y,z[,p[,feature...]] rows -> (points, probs, features)."""
    arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if arr.shape[1] < 3:
        raise ConfigError("cloud CSV needs at least x,y,z columns")
    points = arr[:, :3]
    probs = arr[:, 3] if arr.shape[1] > 3 else np.ones(len(arr))
    feats = arr[:, 4:] if arr.shape[1] > 4 else points[:, 2:3].copy()
    return points, probs, feats
