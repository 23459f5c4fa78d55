"""Sampling-based trajectory shooting and waypoint navigation.

Control candidates are perturbations of a base track-speed command, rolled
out in batch and ranked by C_total = alpha * C_tau + beta * C_wp, where C_tau
penalizes reaction-force dispersion (rough, jolting paths) and C_wp is the
closest approach to the next waypoint.  Selection is sample-and-argmin; a
softmin-weighted blend is available behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .batch import BatchRequest, rollout_batch
from .dynamics import ControlStep, PhysicsConfig, RigidState, Trajectory
from .errors import ConfigError
from .robot import RobotModel
from .terrain import TerrainGrid


@dataclass(frozen=True)
class ShootingConfig:
    n_candidates: int = 64
    spread: float = 0.3           # per-step track-speed std dev [m/s]
    horizon: float = 5.0
    dt: float = 0.01
    replan_every: float = 0.5     # executed prefix per navigate iteration [s]
    alpha: float = 1.0            # C_tau weight
    beta: float = 1.0             # C_wp weight
    waypoint_radius: float = 0.5
    steps_per_candidate: int = 10  # piecewise-constant segments per schedule
    precision: str = "f32"
    workers: int = 1
    softmin_temperature: float = 0.0  # > 0 enables softmin-weighted blending
    max_sim_time: float = 120.0   # navigate budget [s of simulated time]
    stuck_window: float = 5.0     # [s]
    stuck_eps: float = 0.05       # [m]

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ConfigError("need at least one candidate")
        if self.spread < 0:
            raise ConfigError("spread must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("cost weights must be >= 0")


@dataclass(frozen=True)
class CandidateSet:
    schedules: list               # K schedules (lists of ControlStep)
    trajectories: list            # K Trajectory | None for diverged lanes
    c_tau: np.ndarray             # (K,)
    c_wp: np.ndarray              # (K,)
    c_total: np.ndarray           # (K,)
    best: int

    @property
    def n_candidates(self) -> int:
        return len(self.schedules)


def trajectory_cost(traj: Trajectory) -> float:
    """C_tau: mean || N_t - mean(N) || of per-step total reaction forces."""
    N = traj.normal_force_sum.astype(np.float64)
    dev = N - N.mean(axis=0, keepdims=True)
    return float(np.mean(np.linalg.norm(dev, axis=1)))


def waypoint_cost(traj: Trajectory, wp) -> float:
    """C_wp: closest approach of the trajectory to the waypoint."""
    wp = np.asarray(wp, dtype=np.float64)
    return float(np.min(np.linalg.norm(traj.xs.astype(np.float64) - wp, axis=1)))


def total_cost(c_tau: float, c_wp: float, alpha: float, beta: float) -> float:
    return alpha * c_tau + beta * c_wp


def sample_controls(base: ControlStep, cfg: ShootingConfig,
                    rng: np.random.Generator) -> list:
    """K candidate schedules; candidate 0 is the unperturbed base.

    Each schedule splits the horizon into ``steps_per_candidate`` equal
    segments with per-segment Gaussian speed perturbations, clipped to the
    track-speed limit downstream.
    """
    seg = cfg.horizon / cfg.steps_per_candidate
    base_steps = [ControlStep(base.u_left, base.u_right, seg, base.flippers)
                  for _ in range(cfg.steps_per_candidate)]
    out = [base_steps]
    noise = rng.normal(0.0, cfg.spread,
                       size=(cfg.n_candidates - 1, cfg.steps_per_candidate, 2)) \
        if cfg.n_candidates > 1 else np.zeros((0, cfg.steps_per_candidate, 2))
    for k in range(cfg.n_candidates - 1):
        out.append([ControlStep(base.u_left + noise[k, i, 0],
                                base.u_right + noise[k, i, 1], seg, base.flippers)
                    for i in range(cfg.steps_per_candidate)])
    return out


def select_control(state: RigidState, grid: TerrainGrid, robot: RobotModel,
                   wp, cfg: ShootingConfig = ShootingConfig(),
                   base: ControlStep | None = None, seed: int = 0,
                   physics: PhysicsConfig = PhysicsConfig()) -> tuple:
    """Roll out K candidates and return (best schedule, CandidateSet).

    Ties break toward the lowest candidate index, so the unperturbed base
    wins any exact tie.  Diverged candidates get infinite cost.
    """
    if base is None:
        base = ControlStep(1.0, 1.0, cfg.horizon)
    rng = np.random.default_rng(seed)
    schedules = sample_controls(base, cfg, rng)
    req = BatchRequest(grid, robot, [state] * len(schedules), schedules,
                       cfg.dt, cfg.horizon, cfg.precision, cfg.workers, physics)
    res = rollout_batch(req)
    K = len(schedules)
    c_tau = np.full(K, np.inf)
    c_wp = np.full(K, np.inf)
    for k, traj in enumerate(res.trajectories):
        if traj is None:
            continue
        c_tau[k] = trajectory_cost(traj)
        c_wp[k] = waypoint_cost(traj, wp)
    c_total = cfg.alpha * c_tau + cfg.beta * c_wp
    if cfg.alpha == 0.0:                 # avoid 0 * inf on diverged lanes
        c_total = np.where(np.isinf(c_wp), np.inf, cfg.beta * c_wp)
    if cfg.beta == 0.0:
        c_total = np.where(np.isinf(c_tau), np.inf, cfg.alpha * c_tau)
    if not np.any(np.isfinite(c_total)):
        raise ConfigError("every shooting candidate diverged")
    best = int(np.argmin(c_total))       # argmin takes the first minimum
    cand = CandidateSet(schedules, res.trajectories, c_tau, c_wp, c_total, best)
    if cfg.softmin_temperature > 0.0:
        return _softmin_schedule(cand, cfg), cand
    return schedules[best], cand


def _softmin_schedule(cand: CandidateSet, cfg: ShootingConfig) -> list:
    """Exponentially weighted blend of candidate speeds (MPPI-style update)."""
    c = cand.c_total
    finite = np.isfinite(c)
    w = np.zeros_like(c)
    w[finite] = np.exp(-(c[finite] - c[finite].min()) / cfg.softmin_temperature)
    w /= w.sum()
    n_seg = len(cand.schedules[0])
    blend = []
    for i in range(n_seg):
        ul = sum(wk * s[i].u_left for wk, s in zip(w, cand.schedules))
        ur = sum(wk * s[i].u_right for wk, s in zip(w, cand.schedules))
        st = cand.schedules[0][i]
        blend.append(ControlStep(ul, ur, st.duration, st.flippers))
    return blend


@dataclass(frozen=True)
class ReplanRecord:
    time: float
    state_x: np.ndarray
    waypoint: np.ndarray
    best: int
    c_tau: float
    c_wp: float
    c_total: float
    stuck: bool


@dataclass(frozen=True)
class NavigationLog:
    records: list = field(default_factory=list)
    trajectory: Trajectory | None = None
    reached: list = field(default_factory=list)   # per-waypoint success flags
    sim_time: float = 0.0
    stuck_events: int = 0

    @property
    def success(self) -> bool:
        return bool(self.reached) and all(self.reached)


def navigate(start: RigidState, waypoints, grid: TerrainGrid, robot: RobotModel,
             cfg: ShootingConfig = ShootingConfig(), seed: int = 0,
             physics: PhysicsConfig = PhysicsConfig()) -> NavigationLog:
    """Receding-horizon waypoint following.

    Each iteration re-plans with :func:`select_control` and executes the
    first ``replan_every`` seconds of the winning schedule in float64.  A
    waypoint counts as reached when the executed path passes within
    ``waypoint_radius``.  Lack of progress raises a stuck flag in the log but
    is not fatal.
    """
    from .dynamics import rollout

    waypoints = [np.asarray(w, dtype=np.float64) for w in waypoints]
    if not waypoints:
        raise ConfigError("need at least one waypoint")
    state = start
    records = []
    xs_all = [start.x]
    times_all = [0.0]
    Rs_all = [start.R]
    reached = []
    t = 0.0
    stuck_events = 0
    recent = [start.x]
    plan_seed = seed
    for wp in waypoints:
        hit = bool(np.linalg.norm(start.x - wp) <= cfg.waypoint_radius)
        while t < cfg.max_sim_time:
            if np.linalg.norm(state.x - wp) <= cfg.waypoint_radius:
                hit = True
                break
            best_sched, cand = select_control(state, grid, robot, wp, cfg,
                                              seed=plan_seed, physics=physics)
            plan_seed += 1
            traj = rollout(state, best_sched, grid, robot, cfg.dt,
                           cfg.replan_every, physics,
                           retain_point_forces=False)
            n_exec = traj.n_steps
            xs_all.extend(traj.xs[1:])
            Rs_all.extend(traj.Rs[1:])
            times_all.extend(t + traj.times[1:])
            dists = np.linalg.norm(traj.xs - wp, axis=1)
            state = traj.state(n_exec)
            t += cfg.replan_every
            recent.append(state.x)
            window = max(2, int(round(cfg.stuck_window / cfg.replan_every)) + 1)
            recent = recent[-window:]
            stuck = (len(recent) == window
                     and np.linalg.norm(recent[-1] - recent[0]) < cfg.stuck_eps)
            if stuck:
                stuck_events += 1
            records.append(ReplanRecord(t, state.x, wp, cand.best,
                                        float(cand.c_tau[cand.best]),
                                        float(cand.c_wp[cand.best]),
                                        float(cand.c_total[cand.best]), stuck))
            if dists.min() <= cfg.waypoint_radius:
                hit = True
                break
        reached.append(hit)
    vs = np.zeros((len(xs_all), 3))
    ws = np.zeros((len(xs_all), 3))
    traj_out = Trajectory(np.asarray(times_all), np.asarray(xs_all), vs,
                          np.asarray(Rs_all), ws,
                          np.zeros((len(xs_all) - 1, 3))) \
        if len(xs_all) > 1 else None
    return NavigationLog(records, traj_out, reached, t, stuck_events)
