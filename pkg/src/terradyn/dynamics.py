"""Rigid-body state, contact force API, and the Euler rollout driver.

The heavy lifting lives in :mod:`terradyn.stepmath`; this module owns the
state containers, schedule compilation, and the (optionally batched) rollout
loop.  All public scalar operations share formulas with the batched kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import terrain as terrain_mod
from .errors import ConfigError, DegenerateTangentError, NonFiniteError
from .robot import FlipperState, RobotModel, apply_flipper_angles
from .stepmath import NUMPY_OPS, contact_forces, dynamics_step, state_rates
from .terrain import TerrainGrid, TerrainSample

GRAVITY = 9.81

_RKEYS = ("r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22")


@dataclass(frozen=True)
class PhysicsConfig:
    """Contact-model and integrator knobs."""

    gravity: float = GRAVITY
    gate_steepness: float = 100.0   # sigmoid contact gate [1/m]
    tangent_eps: float = 1e-9
    gyroscopic: bool = False        # w x (J w) term, off per the printed ODE
    lateral_friction: bool = False
    max_track_speed: float = 5.0    # [m/s]


@dataclass(frozen=True)
class RigidState:
    """World pose and velocity: position, linear velocity, rotation, body rates."""

    x: np.ndarray
    v: np.ndarray
    R: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        for name, shape in (("x", (3,)), ("v", (3,)), ("R", (3, 3)), ("omega", (3,))):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(shape)
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"state field {name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        R = self.R
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1) > 1e-6:
            raise ConfigError("R must be a proper rotation matrix")

    @staticmethod
    def rest(x=(0.0, 0.0, 0.0), yaw: float = 0.0) -> "RigidState":
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return RigidState(np.asarray(x, dtype=np.float64), np.zeros(3), R, np.zeros(3))

    def yaw(self) -> float:
        return float(np.arctan2(self.R[1, 0], self.R[0, 0]))


@dataclass(frozen=True)
class ControlStep:
    """Track surface speeds and flipper pose held for ``duration`` seconds."""

    u_left: float
    u_right: float
    duration: float
    flippers: FlipperState = field(default_factory=FlipperState.zero)

    def __post_init__(self):
        if not (np.isfinite(self.u_left) and np.isfinite(self.u_right)):
            raise ConfigError("track speeds must be finite")
        if self.duration <= 0:
            raise ConfigError("control step duration must be > 0")


@dataclass(frozen=True)
class Trajectory:
    """Timestamped state sequence with per-step contact force records.

    ``times`` has S+1 entries; per-step arrays have S.  ``normal_force_sum``
    is the total terrain reaction per step (sum over robot points), retained
    for trajectory costs.  Per-point forces are optional (memory).
    """

    times: np.ndarray             # (S+1,)
    xs: np.ndarray                # (S+1, 3)
    vs: np.ndarray                # (S+1, 3)
    Rs: np.ndarray                # (S+1, 3, 3)
    ws: np.ndarray                # (S+1, 3)
    normal_force_sum: np.ndarray  # (S, 3)
    point_normals: np.ndarray | None = None    # (S, N, 3)
    point_frictions: np.ndarray | None = None  # (S, N, 3)
    contacts: np.ndarray | None = None         # (S, N) bool

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("trajectory times must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def state(self, i: int) -> RigidState:
        return RigidState(self.xs[i], self.vs[i], self.Rs[i], self.ws[i])

    def point_totals(self, masses: np.ndarray, gravity: float = GRAVITY) -> np.ndarray:
        """Per-step per-point total force N_i + F_f,i + m_i g."""
        if self.point_normals is None or self.point_frictions is None:
            raise ConfigError("trajectory was built without per-point forces")
        g = np.zeros((1, len(masses), 3))
        g[..., 2] = -gravity * masses
        return self.point_normals + self.point_frictions + g


# --- scalar force/ODE operations ----------------------------------------------

def normal_force(point_pos, point_vel, sample: TerrainSample,
                 steepness: float = 100.0) -> np.ndarray:
    """Gated spring-damper terrain reaction at one world-frame point."""
    n = sample.normal
    dz = sample.height - point_pos[2]
    dh = dz * n[2]
    gate = float(NUMPY_OPS.sigmoid(np.asarray(steepness * dz)))
    mag = max(sample.stiffness * dh - sample.damping * float(np.dot(point_vel, n)), 0.0)
    return mag * gate * n


def friction_force(point_vel, normal_force_vec, track_speed: float,
                   sample: TerrainSample, forward_axis) -> tuple[np.ndarray, bool]:
    """Pacejka-style longitudinal friction; returns (force, degenerate_flag).

    The degenerate flag is set (and zero force returned) when the forward axis
    is parallel to the surface normal.
    """
    n = sample.normal
    a = np.asarray(forward_axis, dtype=np.float64)
    t = a - np.dot(a, n) * n
    tn = np.linalg.norm(t)
    if tn < 1e-6:
        return np.zeros(3), True
    tau = t / tn
    nmag = float(np.linalg.norm(normal_force_vec))
    slip = float(np.dot(track_speed * a - np.asarray(point_vel), tau))
    return sample.friction * nmag * slip * tau, False


@dataclass(frozen=True)
class StateDerivative:
    dx: np.ndarray
    dv: np.ndarray
    dR: np.ndarray
    domega: np.ndarray


def _physics_dicts(grid: TerrainGrid, robot: RobotModel, physics: PhysicsConfig,
                   dtype=np.float64, array_layers=frozenset()):
    """Kernel-ready constant packs for terrain, robot, and config.

    Layers named in ``array_layers`` keep their full array form even when
    constant, so a recorded rollout that differentiates them sees the exact
    same arithmetic as this plain path.
    """
    sx, sy = terrain_mod.slope_layers(grid, "h_support")
    spec = grid.spec

    def flat(name, layer):
        # constant layers collapse to scalars; the kernel skips their gathers
        if name not in array_layers and np.ptp(layer) == 0:
            return float(layer.flat[0])
        return layer.ravel().astype(dtype)

    terr = {
        "h": flat("h", grid.h_support),
        "sx": flat("sx", sx),
        "sy": flat("sy", sy),
        "stiffness": flat("stiffness", grid.stiffness),
        "damping": flat("damping", grid.damping),
        "friction": flat("friction", grid.friction),
        "ox": spec.origin_xy[0], "oy": spec.origin_xy[1],
        "inv_res": 1.0 / spec.resolution,
        "cols": spec.cols, "rows": spec.rows,
    }
    left, right, track = robot.side_masks()
    j_unit = robot.inertia / robot.total_mass
    try:
        jinv_unit = np.linalg.inv(j_unit)
    except np.linalg.LinAlgError as exc:
        raise ConfigError("robot inertia is singular") from exc
    rob = {
        "m": robot.total_mass,
        "w_frac": (robot.masses / robot.total_mass).astype(dtype),
        "left_mask": left.astype(dtype),
        "right_mask": right.astype(dtype),
        "track_mask": track.astype(dtype),
    }
    cfg = {
        "gravity": physics.gravity,
        "k_gate": physics.gate_steepness,
        "tangent_eps": physics.tangent_eps,
        "gyroscopic": physics.gyroscopic,
        "lateral_friction": physics.lateral_friction,
        "j_unit": j_unit.tolist(),
        "jinv_unit": jinv_unit.tolist(),
    }
    return terr, rob, cfg


def state_to_dict(x, v, R, w, dtype=np.float64):
    """Pack (B, 3)/(B, 3, 3) state arrays into kernel component dict."""
    x = np.asarray(x, dtype=dtype)
    v = np.asarray(v, dtype=dtype)
    R = np.asarray(R, dtype=dtype)
    w = np.asarray(w, dtype=dtype)
    st = {
        "x": x[:, 0:1], "y": x[:, 1:2], "z": x[:, 2:3],
        "vx": v[:, 0:1], "vy": v[:, 1:2], "vz": v[:, 2:3],
        "wx": w[:, 0:1], "wy": w[:, 1:2], "wz": w[:, 2:3],
    }
    for i in range(3):
        for j in range(3):
            st[f"r{i}{j}"] = np.ascontiguousarray(R[:, i, j])[:, None]
    return st


def _points_dict(posed: np.ndarray, dtype):
    posed = np.asarray(posed, dtype=dtype)
    return {"px": posed[..., 0], "py": posed[..., 1], "pz": posed[..., 2]}


def state_derivative(s: RigidState, c: ControlStep, grid: TerrainGrid,
                     robot: RobotModel,
                     physics: PhysicsConfig = PhysicsConfig()) -> StateDerivative:
    """Instantaneous rigid-body ODE right-hand side."""
    terr, rob, cfg = _physics_dicts(grid, robot, physics)
    st = state_to_dict(s.x[None], s.v[None], s.R[None], s.omega[None])
    pts = _points_dict(apply_flipper_angles(robot, c.flippers), np.float64)
    ctrl = {"u_left": np.array([[c.u_left]]), "u_right": np.array([[c.u_right]])}
    terrain_mod.check_bounds(grid, NUMPY_OPS.value(st["x"]), NUMPY_OPS.value(st["y"]))
    forces = contact_forces(NUMPY_OPS, st, pts, ctrl, terr, rob, cfg)
    if grid.oob_policy == "error":
        terrain_mod.check_bounds(grid, forces["pwx"], forces["pwy"])
    vdx, vdy, vdz, wdx, wdy, wdz = state_rates(NUMPY_OPS, st, pts, forces, rob, cfg)
    ww = np.array([forces["wwx"], forces["wwy"], forces["wwz"]]).ravel()
    Om = np.array([[0, -ww[2], ww[1]], [ww[2], 0, -ww[0]], [-ww[1], ww[0], 0]])
    return StateDerivative(
        dx=s.v.copy(),
        dv=np.array([vdx, vdy, vdz]).ravel(),
        dR=Om @ s.R,
        domega=np.array([wdx, wdy, wdz]).ravel(),
    )


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest-rotation-style Gram-Schmidt on columns (col2 from cross product)."""
    c0 = R[:, 0] / np.linalg.norm(R[:, 0])
    c1 = R[:, 1] - np.dot(c0, R[:, 1]) * c0
    c1 = c1 / np.linalg.norm(c1)
    return np.column_stack([c0, c1, np.cross(c0, c1)])


def euler_step(s: RigidState, ds: StateDerivative, dt: float) -> RigidState:
    """Explicit Euler update with rotation re-orthonormalization."""
    if dt <= 0:
        raise ConfigError("dt must be > 0")
    fields = (s.x + dt * ds.dx, s.v + dt * ds.dv,
              s.R + dt * ds.dR, s.omega + dt * ds.domega)
    if not all(np.all(np.isfinite(f)) for f in fields):
        raise NonFiniteError("state overflowed during Euler step; shrink dt")
    x, v, R, w = fields
    return RigidState(x, v, orthonormalize(R), w)


# --- rollout -------------------------------------------------------------------

def n_steps_for(horizon: float, dt: float) -> int:
    n = round(horizon / dt)
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigError(f"horizon {horizon} must be a positive multiple of dt {dt}")
    return n


def compile_schedule(schedule, dt: float, n_steps: int, max_speed: float):
    """Zero-order-hold expansion of ControlSteps to per-step arrays.

    Returns (u (S, 2), flipper angles (S, 4)); the last command is held if the
    schedule ends early.
    """
    if isinstance(schedule, ControlStep):
        schedule = [schedule]
    if not schedule:
        raise ConfigError("empty control schedule")
    u = np.zeros((n_steps, 2))
    flips = np.zeros((n_steps, 4))
    t_edges = np.cumsum([c.duration for c in schedule])
    j = 0
    for i in range(n_steps):
        t = i * dt
        while j < len(schedule) - 1 and t >= t_edges[j] - 1e-12:
            j += 1
        u[i] = (schedule[j].u_left, schedule[j].u_right)
        flips[i] = schedule[j].flippers.angles
    np.clip(u, -max_speed, max_speed, out=u)
    return u, flips


class _PoseCache:
    """Flipper-posed point sets keyed by angle tuple."""

    def __init__(self, robot: RobotModel, dtype):
        self.robot = robot
        self.dtype = dtype
        self._cache = {}

    def get(self, angles: np.ndarray):
        key = tuple(np.round(angles, 12))
        if key not in self._cache:
            posed = apply_flipper_angles(self.robot, FlipperState(np.asarray(key)))
            self._cache[key] = _points_dict(posed, self.dtype)
        return self._cache[key]


def rollout_arrays(x0, v0, R0, w0, u_seq, flip_seq, grid: TerrainGrid,
                   robot: RobotModel, dt: float, n_steps: int,
                   physics: PhysicsConfig = PhysicsConfig(),
                   dtype=np.float64,
                   retain_point_forces: bool = False,
                   array_layers=frozenset()):
    """Batched rollout core.  All state inputs are (B, ...) arrays.

    ``u_seq`` is (B, S, 2) (or (S, 2), shared); ``flip_seq`` is (S, 4), shared
    across the batch.  Returns a dict with stacked state histories, per-step
    total normal forces, and a per-trajectory ``ok`` flag: a lane that goes
    non-finite is frozen out of the results but never poisons its neighbours
    (all lane math is elementwise).
    """
    B = np.asarray(x0).shape[0]
    terr, rob, cfg = _physics_dicts(grid, robot, physics, dtype, array_layers)
    st = state_to_dict(x0, v0, R0, w0, dtype)
    u_seq = np.asarray(u_seq, dtype=dtype)
    if u_seq.ndim == 2:
        u_seq = np.broadcast_to(u_seq, (B,) + u_seq.shape)
    flip_seq = np.asarray(flip_seq, dtype=np.float64)
    poses = _PoseCache(robot, dtype)
    N = robot.n_points

    xs = np.empty((B, n_steps + 1, 3), dtype=dtype)
    vs = np.empty_like(xs)
    ws = np.empty_like(xs)
    Rs = np.empty((B, n_steps + 1, 3, 3), dtype=dtype)
    fsum = np.empty((B, n_steps, 3), dtype=dtype)
    pN = np.empty((B, n_steps, N, 3), dtype=dtype) if retain_point_forces else None
    pF = np.empty_like(pN) if retain_point_forces else None
    contacts = np.empty((B, n_steps, N), dtype=bool) if retain_point_forces else None

    def store_state(i):
        xs[:, i, 0] = st["x"][:, 0]; xs[:, i, 1] = st["y"][:, 0]; xs[:, i, 2] = st["z"][:, 0]
        vs[:, i, 0] = st["vx"][:, 0]; vs[:, i, 1] = st["vy"][:, 0]; vs[:, i, 2] = st["vz"][:, 0]
        ws[:, i, 0] = st["wx"][:, 0]; ws[:, i, 1] = st["wy"][:, 0]; ws[:, i, 2] = st["wz"][:, 0]
        for r in range(3):
            for c in range(3):
                Rs[:, i, r, c] = st[f"r{r}{c}"][:, 0]

    store_state(0)
    for s in range(n_steps):
        pts = poses.get(flip_seq[s])
        ctrl = {"u_left": u_seq[:, s, 0:1], "u_right": u_seq[:, s, 1:2]}
        new_st, forces = dynamics_step(NUMPY_OPS, st, pts, ctrl, terr, rob, cfg, dt)
        if grid.oob_policy == "error":
            terrain_mod.check_bounds(grid, forces["pwx"], forces["pwy"])
        fsum[:, s, 0] = np.sum(forces["fnx"], axis=-1)
        fsum[:, s, 1] = np.sum(forces["fny"], axis=-1)
        fsum[:, s, 2] = np.sum(forces["fnz"], axis=-1)
        if retain_point_forces:
            for k, comp in enumerate(("x", "y", "z")):
                pN[:, s, :, k] = forces["fn" + comp]
                pF[:, s, :, k] = forces["ff" + comp]
            contacts[:, s] = NUMPY_OPS.value(forces["gate"]) > 0.5
        st = new_st
        store_state(s + 1)

    ok = np.all(np.isfinite(xs[:, -1]), axis=-1) & np.all(np.isfinite(vs[:, -1]), axis=-1)
    return {
        "times": np.arange(n_steps + 1) * dt,
        "xs": xs, "vs": vs, "Rs": Rs, "ws": ws,
        "normal_force_sum": fsum,
        "point_normals": pN, "point_frictions": pF, "contacts": contacts,
        "ok": ok,
    }


def rollout(state0: RigidState, schedule, grid: TerrainGrid, robot: RobotModel,
            dt: float = 0.01, horizon: float = 5.0,
            physics: PhysicsConfig = PhysicsConfig(),
            retain_point_forces: bool = True) -> Trajectory:
    """Single deterministic rollout in float64.  Raises NonFiniteError on blow-up."""
    n = n_steps_for(horizon, dt)
    u_seq, flip_seq = compile_schedule(schedule, dt, n, physics.max_track_speed)
    out = rollout_arrays(state0.x[None], state0.v[None], state0.R[None],
                         state0.omega[None], u_seq, flip_seq, grid, robot,
                         dt, n, physics, np.float64, retain_point_forces)
    if not out["ok"][0]:
        raise NonFiniteError("rollout diverged to non-finite state; shrink dt")
    return Trajectory(
        times=out["times"], xs=out["xs"][0], vs=out["vs"][0], Rs=out["Rs"][0],
        ws=out["ws"][0], normal_force_sum=out["normal_force_sum"][0],
        point_normals=out["point_normals"][0] if retain_point_forces else None,
        point_frictions=out["point_frictions"][0] if retain_point_forces else None,
        contacts=out["contacts"][0] if retain_point_forces else None,
    )


def mechanical_energy(state: RigidState, grid: TerrainGrid, robot: RobotModel,
                      flippers: FlipperState | None = None,
                      gravity: float = GRAVITY) -> float:
    """Kinetic + gravitational + contact-spring energy (diagnostics only)."""
    m, J = robot.total_mass, robot.inertia
    e_kin = 0.5 * m * float(state.v @ state.v) + 0.5 * float(state.omega @ J @ state.omega)
    e_pot = m * gravity * float(state.x[2])
    posed = apply_flipper_angles(robot, flippers or FlipperState.zero())
    pw = state.x + posed @ state.R.T
    e_spring = 0.0
    for p in pw:
        s = terrain_mod.surface_sample(grid, "h_support", p[0], p[1])
        dh = max((s.height - p[2]) * s.normal[2], 0.0)
        e_spring += 0.5 * s.stiffness * dh * dh
    return e_kin + e_pot + e_spring
