"""Thin array-level bindings for the terradyn engine.

The bindings expose a small scripting surface — ``rollout``, ``gradient``,
``shoot`` plus the ``load_grid`` / ``load_robot`` loaders — that takes and
returns plain numpy arrays and dicts.  All physics runs in the engine; the
bindings only validate shapes, convert between array and dataclass form, and
pin the engine version they were built against.

A :class:`BoundSession` holds an immutable (grid, robot, physics, dt) context
so repeated calls don't re-validate the scene.  Sessions can be closed, after
which any use raises :class:`SessionClosedError`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

import terradyn
from terradyn import (
    ControlStep,
    PhysicsConfig,
    RigidState,
    TerrainGrid,
    TrackingLoss,
    load_grid,
    load_robot,
)
from terradyn.diffsim import LEAF_NAMES
from terradyn.robot import RobotModel
from terradyn.shooting import ShootingConfig, select_control
from terradyn.trajio import rotation_to_quat

__version__ = "0.1.0"
ENGINE_VERSION = "0.1.0"

__all__ = [
    "BoundSession",
    "BindingError",
    "SessionClosedError",
    "ENGINE_VERSION",
    "bind",
    "bound_gradient",
    "bound_rollout",
    "bound_shoot",
    "gradient",
    "load_grid",
    "load_robot",
    "rollout",
    "shoot",
    "state_vector",
]

if terradyn.__version__ != ENGINE_VERSION:
    raise ImportError(
        f"terradyn-bindings {__version__} is pinned to engine {ENGINE_VERSION}, "
        f"found terradyn {terradyn.__version__}")


class BindingError(ValueError):
    """Invalid arguments at the binding boundary (shapes, names, values)."""


class SessionClosedError(RuntimeError):
    """The session was closed; its grid/robot context is gone."""


@dataclass
class BoundSession:
    """Immutable (grid, robot, physics, dt) context for repeated calls."""

    grid: TerrainGrid
    robot: RobotModel
    dt: float = 0.01
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    _closed: bool = field(default=False, repr=False)

    def close(self) -> None:
        self._closed = True

    def __enter__(self) -> "BoundSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _check_open(self) -> None:
        if self._closed:
            raise SessionClosedError("session is closed")

    def rollout(self, state, controls, horizon: float | None = None) -> dict:
        return bound_rollout(self, state, controls, horizon)

    def gradient(self, state, controls, ref_xs, leaves=("heights",),
                 horizon: float | None = None,
                 checkpoint_every: int = 50) -> dict:
        return bound_gradient(self, state, controls, ref_xs, leaves,
                              horizon, checkpoint_every)

    def shoot(self, state, waypoint, n_candidates: int = 64,
              horizon: float = 5.0, seed: int = 0, spread: float = 0.3,
              alpha: float = 1.0, beta: float = 1.0,
              base=(1.0, 1.0)) -> dict:
        return bound_shoot(self, state, waypoint, n_candidates, horizon,
                           seed, spread, alpha, beta, base)


def bind(grid, robot, dt: float = 0.01,
         physics: PhysicsConfig | None = None) -> BoundSession:
    """Open a session; grid/robot may be objects or file paths."""
    if isinstance(grid, (str, bytes)) or hasattr(grid, "__fspath__"):
        grid = load_grid(grid)
    if isinstance(robot, (str, bytes)) or hasattr(robot, "__fspath__"):
        robot = load_robot(robot)
    if not isinstance(grid, TerrainGrid):
        raise BindingError("grid must be a TerrainGrid or a path")
    if not isinstance(robot, RobotModel):
        raise BindingError("robot must be a RobotModel or a path")
    if dt <= 0:
        raise BindingError("dt must be positive")
    return BoundSession(grid, robot, dt, physics or PhysicsConfig())


def state_vector(state: RigidState) -> np.ndarray:
    """13-vector [x(3), quat wxyz(4), v(3), omega(3)] from a RigidState."""
    return np.concatenate([state.x, rotation_to_quat(state.R),
                           state.v, state.omega])


def _as_state(state) -> RigidState:
    if isinstance(state, RigidState):
        return state
    arr = np.asarray(state, dtype=np.float64)
    if arr.shape != (13,):
        raise BindingError(
            f"state must be a RigidState or a 13-vector "
            f"[x(3), quat wxyz(4), v(3), omega(3)], got shape {arr.shape}")
    from terradyn.trajio import quat_to_rotation

    return RigidState(arr[:3], arr[7:10], quat_to_rotation(arr[3:7]),
                      arr[10:13])


def _as_schedule(controls) -> list:
    """(K, 3) rows [u_left, u_right, duration], or (K, 7) with 4 flipper
    angles appended; a list of ControlStep passes through."""
    if isinstance(controls, (list, tuple)) and controls and \
            isinstance(controls[0], ControlStep):
        return list(controls)
    arr = np.asarray(controls, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (3, 7) or arr.shape[0] == 0:
        raise BindingError(
            f"controls must be a (K, 3) or (K, 7) array of "
            f"[u_left, u_right, duration(, flippers x4)], got shape {arr.shape}")
    if arr.shape[1] == 3:
        return [ControlStep(r[0], r[1], r[2]) for r in arr]
    return [ControlStep(r[0], r[1], r[2], tuple(r[3:7])) for r in arr]


def _traj_arrays(traj) -> dict:
    quats = np.array([rotation_to_quat(R) for R in traj.Rs])
    return {
        "times": traj.times,
        "xs": traj.xs,
        "quats": quats,
        "Rs": traj.Rs,
        "vs": traj.vs,
        "omegas": traj.ws,
        "normal_force_sum": traj.normal_force_sum,
    }


def bound_rollout(session: BoundSession, state, controls,
                  horizon: float | None = None) -> dict:
    """Float64 rollout; returns arrays (times, poses, velocities, forces)."""
    session._check_open()
    schedule = _as_schedule(controls)
    if horizon is None:
        horizon = float(sum(s.duration for s in schedule))
    traj = terradyn.rollout(_as_state(state), schedule, session.grid,
                            session.robot, session.dt, horizon,
                            session.physics)
    return _traj_arrays(traj)


def bound_gradient(session: BoundSession, state, controls, ref_xs,
                   leaves=("heights",), horizon: float | None = None,
                   checkpoint_every: int = 50) -> dict:
    """Tracking-loss gradient w.r.t. the requested leaves.

    ``ref_xs`` is an (S+1, 3) reference position track matching the rollout
    length.  Returns {"loss": float, leaf: array, ...}.
    """
    session._check_open()
    leaves = tuple(leaves)
    bad = [l for l in leaves if l not in LEAF_NAMES]
    if bad:
        raise BindingError(
            f"unknown gradient leaves {bad}; valid leaves are {list(LEAF_NAMES)}")
    schedule = _as_schedule(controls)
    if horizon is None:
        horizon = float(sum(s.duration for s in schedule))
    ref = np.asarray(ref_xs, dtype=np.float64)
    n_steps = int(round(horizon / session.dt))
    if ref.shape != (n_steps + 1, 3):
        raise BindingError(
            f"ref_xs must have shape ({n_steps + 1}, 3) for this horizon, "
            f"got {ref.shape}")
    bundle = terradyn.gradient(
        _as_state(state), schedule, session.grid, session.robot,
        TrackingLoss(ref), session.dt, horizon, session.physics, leaves,
        checkpoint_every)
    out = {"loss": bundle.loss}
    out.update(bundle.grads)
    return out


def bound_shoot(session: BoundSession, state, waypoint,
                n_candidates: int = 64, horizon: float = 5.0, seed: int = 0,
                spread: float = 0.3, alpha: float = 1.0, beta: float = 1.0,
                base=(1.0, 1.0)) -> dict:
    """Sample-and-argmin control selection toward a waypoint.

    Returns the winning candidate index, its schedule as a (K, 3) array and
    the full cost table, matching the engine's selection under the same seed.
    """
    session._check_open()
    wp = np.asarray(waypoint, dtype=np.float64)
    if wp.shape not in ((2,), (3,)):
        raise BindingError(f"waypoint must be (2,) or (3,), got {wp.shape}")
    if wp.shape == (2,):
        wp = np.append(wp, 0.0)
    if n_candidates < 1:
        raise BindingError("n_candidates must be >= 1")
    cfg = ShootingConfig(n_candidates=n_candidates, spread=spread,
                         horizon=horizon, dt=session.dt, alpha=alpha,
                         beta=beta)
    best_sched, cand = select_control(
        _as_state(state), session.grid, session.robot, wp, cfg,
        base=ControlStep(base[0], base[1], horizon), seed=seed,
        physics=session.physics)
    return {
        "best": cand.best,
        "schedule": np.array([[s.u_left, s.u_right, s.duration]
                              for s in best_sched]),
        "c_tau": cand.c_tau,
        "c_wp": cand.c_wp,
        "c_total": cand.c_total,
    }


def rollout(grid, robot, state, controls, dt: float = 0.01,
            horizon: float | None = None) -> dict:
    """One-shot rollout without keeping a session around."""
    return bound_rollout(bind(grid, robot, dt), state, controls, horizon)


def gradient(grid, robot, state, controls, ref_xs, leaves=("heights",),
             dt: float = 0.01, horizon: float | None = None) -> dict:
    """One-shot gradient without keeping a session around."""
    return bound_gradient(bind(grid, robot, dt), state, controls, ref_xs,
                          leaves, horizon)


def shoot(grid, robot, state, waypoint, dt: float = 0.01, **kwargs) -> dict:
    """One-shot control selection without keeping a session around."""
    return bound_shoot(bind(grid, robot, dt), state, waypoint, **kwargs)
