"""Data-parallel rollouts over shared terrain/robot, plus the throughput benchmark.

The batch state is laid out structure-of-arrays; all per-step math is
elementwise across lanes, so results are bit-identical to sequential rollouts
and independent of the worker count.  Workers split the batch into contiguous
lane shards; each shard writes to its own output slots.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (PhysicsConfig, RigidState, Trajectory, compile_schedule,
                       n_steps_for, rollout_arrays)
from .errors import ConfigError
from .robot import RobotModel
from .terrain import TerrainGrid


@dataclass(frozen=True)
class BatchRequest:
    """B rollouts sharing one grid and robot."""

    grid: TerrainGrid
    robot: RobotModel
    states: list                  # B RigidStates
    schedules: list               # B control schedules (or 1, shared)
    dt: float = 0.01
    horizon: float = 5.0
    precision: str = "f64"        # "f64" reference | "f32" throughput
    workers: int = 1
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    retain_point_forces: bool = False

    def __post_init__(self):
        if len(self.states) < 1:
            raise ConfigError("batch needs at least one initial state")
        if len(self.schedules) not in (1, len(self.states)):
            raise ConfigError("need one schedule per state (or a single shared one)")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def batch_size(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class BatchResult:
    trajectories: list            # B Trajectory | None (None = diverged lane)
    ok: np.ndarray                # (B,) bool
    wall_time: float

    @property
    def n_ok(self) -> int:
        return int(self.ok.sum())


def _compile_batch(req: BatchRequest, n: int):
    """Per-lane compiled controls (B, S, 2) and the shared flipper track.

    Flipper schedules must agree across the batch (points are posed once per
    step for all lanes).
    """
    max_u = req.physics.max_track_speed
    u0, flips = compile_schedule(req.schedules[0], req.dt, n, max_u)
    if len(req.schedules) == 1:
        return np.broadcast_to(u0, (req.batch_size,) + u0.shape), flips
    us = [u0]
    for sched in req.schedules[1:]:
        u, f = compile_schedule(sched, req.dt, n, max_u)
        if not np.array_equal(f, flips):
            raise ConfigError("flipper schedules must match across the batch")
        us.append(u)
    return np.stack(us), flips


def rollout_batch(req: BatchRequest) -> BatchResult:
    """Run the batch; a lane that diverges yields None without affecting others."""
    dtype = np.float32 if req.precision == "f32" else np.float64
    n = n_steps_for(req.horizon, req.dt)
    u, flips = _compile_batch(req, n)
    B = req.batch_size
    x0 = np.stack([s.x for s in req.states])
    v0 = np.stack([s.v for s in req.states])
    R0 = np.stack([s.R for s in req.states])
    w0 = np.stack([s.omega for s in req.states])

    t0 = time.perf_counter()

    def run(lo, hi):
        return rollout_arrays(x0[lo:hi], v0[lo:hi], R0[lo:hi], w0[lo:hi],
                              u[lo:hi], flips, req.grid, req.robot, req.dt, n,
                              req.physics, dtype, req.retain_point_forces)

    workers = min(req.workers, B)
    if workers == 1:
        outs = [run(0, B)]
        bounds = [(0, B)]
    else:
        # contiguous shards; per-lane math is elementwise, so shard boundaries
        # cannot change any lane's values
        edges = np.linspace(0, B, workers + 1).astype(int)
        bounds = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
            outs = list(pool.map(lambda ab: run(*ab), bounds))
    wall = time.perf_counter() - t0

    trajs: list = [None] * B
    ok = np.zeros(B, dtype=bool)
    for (lo, hi), out in zip(bounds, outs):
        ok[lo:hi] = out["ok"]
        for i in range(hi - lo):
            if not out["ok"][i]:
                continue
            rp = req.retain_point_forces
            trajs[lo + i] = Trajectory(
                times=out["times"], xs=out["xs"][i], vs=out["vs"][i],
                Rs=out["Rs"][i], ws=out["ws"][i],
                normal_force_sum=out["normal_force_sum"][i],
                point_normals=out["point_normals"][i] if rp else None,
                point_frictions=out["point_frictions"][i] if rp else None,
                contacts=out["contacts"][i] if rp else None)
    return BatchResult(trajs, ok, wall)


# --- benchmark ---------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkEntry:
    horizon: float
    batch_size: int
    repetitions: int
    median_time: float
    times: tuple
    throughput: float             # rollouts / s at the median


@dataclass(frozen=True)
class BenchmarkReport:
    entries: list
    precision: str
    workers: int
    linear_slack: float
    linearity_ok: bool

    def to_json(self) -> str:
        return json.dumps({
            "precision": self.precision,
            "workers": self.workers,
            "linear_slack": self.linear_slack,
            "linearity_ok": self.linearity_ok,
            "entries": [{
                "horizon_s": e.horizon, "batch_size": e.batch_size,
                "repetitions": e.repetitions, "median_time_s": e.median_time,
                "times_s": list(e.times), "rollouts_per_s": e.throughput,
            } for e in self.entries],
        }, indent=2)

    def write_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["horizon_s", "batch_size", "repetitions",
                    "median_time_s", "rollouts_per_s"])
        for e in self.entries:
            w.writerow([e.horizon, e.batch_size, e.repetitions,
                        f"{e.median_time:.6f}", f"{e.throughput:.2f}"])


def _default_bench_scene(grid_size: int, resolution: float):
    from .robot import build_tracked_robot
    from .terrain import GridSpec
    from .worlds import generate_world

    spec = GridSpec((0.0, 0.0), resolution, grid_size, grid_size)
    grid = generate_world("bump-field", spec, seed=7, height=0.15)
    robot = build_tracked_robot()
    ex = spec.extent
    start = RigidState.rest(x=(0.5 * (ex[0] + ex[1]), 0.5 * (ex[2] + ex[3]), 0.0))
    return grid, robot, start


def benchmark(horizons=(1.0, 2.0, 5.0), batch_sizes=(64, 512), repetitions: int = 3,
              dt: float = 0.01, precision: str = "f32", workers: int = 1,
              grid_size: int = 128, resolution: float = 0.1,
              linear_slack: float = 1.3, scene=None) -> BenchmarkReport:
    """Median wall time per (horizon, batch) configuration.

    Asserts runtime grows at most linearly (within ``linear_slack``) with the
    horizon at each batch size; raises ConfigError on empty sweeps.
    """
    horizons = sorted(set(float(h) for h in horizons))
    batch_sizes = sorted(set(int(b) for b in batch_sizes))
    if not horizons or not batch_sizes or repetitions < 1:
        raise ConfigError("benchmark sweeps must be non-empty, repetitions >= 1")
    for h in horizons:
        n_steps_for(h, dt)  # validates positive multiples
    grid, robot, start = scene if scene is not None else \
        _default_bench_scene(grid_size, resolution)

    from .dynamics import ControlStep
    entries = []
    for B in batch_sizes:
        rng = np.random.default_rng(11)
        speeds = rng.uniform(-1.0, 1.0, size=(B, 2))
        for h in horizons:
            schedules = [ControlStep(s[0], s[1], h) for s in speeds]
            req = BatchRequest(grid, robot, [start] * B, schedules, dt, h,
                               precision, workers)
            times = []
            for _ in range(repetitions):
                times.append(rollout_batch(req).wall_time)
            med = float(np.median(times))
            entries.append(BenchmarkEntry(h, B, repetitions, med, tuple(times),
                                          B / med))

    ok = True
    for B in batch_sizes:
        es = sorted((e for e in entries if e.batch_size == B),
                    key=lambda e: e.horizon)
        base = es[0]
        for e in es[1:]:
            if e.median_time > linear_slack * (e.horizon / base.horizon) * base.median_time:
                ok = False
    return BenchmarkReport(entries, precision, workers, linear_slack, ok)
