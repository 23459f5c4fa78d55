"""Command-line entry point: ``terradyn <subcommand> [flags]``.

Subcommands: simulate, gradcheck, identify, shoot, navigate, bench, splat,
evaluate.  All outputs are written atomically (temp file + rename).  Exit
codes: 0 success, 1 validation/usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import diffsim, shooting
from .identify import IdentifyConfig, identify as run_identify
from .batch import benchmark
from .dynamics import rollout
from .errors import (ConfigError, DivergedError, NonFiniteError,
                     OutOfBoundsError, TapeOverflowError, TerradynError)
from .liftsplat import LiftedFeatureCloud, lift_pixel, splat
from .losses import rotation_error, translation_error
from .terrain import GridSpec, load_grid, save_grid
from .trajio import (Scenario, atomic_write, load_camera, load_cloud_csv,
                     load_scenario, load_trajectory_csv, save_trajectory_csv,
                     save_trajectory_npz)

_VALIDATION_ERRORS = (ConfigError, OutOfBoundsError, FileNotFoundError,
                      json.JSONDecodeError, KeyError, ValueError)
_NUMERICAL_ERRORS = (NonFiniteError, DivergedError, TapeOverflowError)


def _default_scenario(args) -> Scenario:
    """Built-in bump-field scenario used when --scenario is omitted."""
    from .dynamics import ControlStep, PhysicsConfig, RigidState
    from .robot import build_tracked_robot
    from .worlds import generate_world

    spec = GridSpec((0.0, 0.0), 0.1, 64, 64)
    grid = generate_world("bump-field", spec, seed=args.seed, height=0.15)
    return Scenario(
        grid=grid, robot=build_tracked_robot(),
        # off-lattice start: contact points on exact cell boundaries sit on
        # bilinear derivative kinks where central differences are one-sided
        state0=RigidState.rest(x=(1.0137, 3.1712, 0.1041), yaw=0.0731),
        schedule=[ControlStep(0.8, 0.6, 10.0)],
        dt=0.01, horizon=2.0, seed=args.seed, physics=PhysicsConfig(),
        waypoints=((5.0, 3.17, 0.0),))


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario, seed_override=args.seed) \
        if args.scenario else _default_scenario(args)
    if args.dt is not None or args.horizon is not None:
        from dataclasses import replace
        sc = replace(sc, dt=args.dt if args.dt is not None else sc.dt,
                     horizon=args.horizon if args.horizon is not None else sc.horizon)
    return sc


def _outpath(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_json(args, name: str, payload: dict) -> str:
    if not args.reproducible:
        import time
        payload = dict(payload, generated_at=time.strftime("%Y-%m-%dT%H:%M:%S"))
    path = _outpath(args, name)
    atomic_write(path, json.dumps(payload, indent=2) + "\n")
    return path


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    sc = _scenario(args)
    traj = rollout(sc.state0, sc.schedule, sc.grid, sc.robot, sc.dt,
                   sc.horizon, sc.physics, retain_point_forces=args.forces)
    save_trajectory_csv(_outpath(args, "trajectory.csv"), traj)
    if args.forces:
        save_trajectory_npz(_outpath(args, "trajectory.npz"), traj)
    disp = float(np.linalg.norm(traj.xs[-1] - traj.xs[0]))
    print(f"simulate: {traj.n_steps} steps, displacement {disp:.4f} m, "
          f"wrote {args.out}/trajectory.csv")
    return 0


def cmd_gradcheck(args) -> int:
    sc = _scenario(args)
    rec = diffsim.record_rollout(sc.state0, sc.schedule, sc.grid, sc.robot,
                                 sc.dt, sc.horizon, sc.physics,
                                 leaves=diffsim.LEAF_NAMES)
    loss = diffsim.TrackingLoss(rec.trajectory.xs
                                + np.array([0.02, -0.01, 0.03]))
    report = diffsim.finite_difference_check(
        sc.state0, sc.schedule, sc.grid, sc.robot, loss, sc.dt, sc.horizon,
        sc.physics, leaves=diffsim.LEAF_NAMES,
        coords_per_leaf=args.coords_per_leaf, eps=args.eps)
    payload = {
        "loss": report.loss,
        "max_rel_err": report.max_rel_err,
        "n_checked": report.n_checked,
        "tolerance": args.tolerance,
        "passed": report.max_rel_err <= args.tolerance,
        "warnings": list(report.warnings),
        "entries": [{"leaf": e.leaf, "coord": list(e.coord),
                     "analytic": e.analytic, "numeric": e.numeric,
                     "rel_err": e.rel_err} for e in report.entries],
    }
    path = _write_json(args, "gradcheck.json", payload)
    print(f"gradcheck: max rel err {report.max_rel_err:.3e} over "
          f"{report.n_checked} coords, wrote {path}")
    return 0 if payload["passed"] else 2


def cmd_identify(args) -> int:
    sc = _scenario(args)
    reference = rollout(sc.state0, sc.schedule, sc.grid, sc.robot, sc.dt,
                        sc.horizon, sc.physics, retain_point_forces=False) \
        if args.reference is None else load_trajectory_csv(args.reference)
    grid0 = sc.grid if args.reference is not None else \
        sc.grid.with_layers(h_geom=np.zeros(sc.grid.spec.shape()))
    cfg = IdentifyConfig(
        layers=tuple(args.layers.split(",")), step_size=args.step_size,
        iterations=args.iterations)
    result = run_identify(grid0, reference, sc.schedule, sc.robot,
                          cfg, sc.physics, state0=sc.state0)
    save_grid(_outpath(args, "identified.grid"), result.grid)
    hist = "iteration,loss\n" + "".join(
        f"{i},{v:.17g}\n" for i, v in enumerate(result.loss_history))
    atomic_write(_outpath(args, "loss_history.csv"), hist)
    print(f"identify: loss {result.loss_history[0]:.6g} -> "
          f"{result.best_loss:.6g} (best at iter {result.best_iteration}), "
          f"wrote {args.out}/identified.grid")
    return 0


def cmd_shoot(args) -> int:
    sc = _scenario(args)
    if not sc.waypoints:
        raise ConfigError("shoot needs a waypoint (scenario 'waypoints' field)")
    cfg = shooting.ShootingConfig(
        n_candidates=args.candidates, horizon=sc.horizon, dt=sc.dt,
        alpha=args.alpha, beta=args.beta, precision=args.precision,
        workers=args.threads)
    best, cand = shooting.select_control(
        sc.state0, sc.grid, sc.robot, sc.waypoints[0], cfg, seed=sc.seed,
        physics=sc.physics)
    payload = {
        "best": cand.best,
        "n_candidates": cand.n_candidates,
        "costs": [{"candidate": k, "c_tau": float(cand.c_tau[k]),
                   "c_wp": float(cand.c_wp[k]),
                   "c_total": float(cand.c_total[k])}
                  for k in range(cand.n_candidates)],
        "best_schedule": [{"u_left": s.u_left, "u_right": s.u_right,
                           "duration": s.duration} for s in best],
    }
    path = _write_json(args, "shoot.json", payload)
    if cand.trajectories[cand.best] is not None:
        save_trajectory_csv(_outpath(args, "best_trajectory.csv"),
                            cand.trajectories[cand.best])
    print(f"shoot: best candidate {cand.best} "
          f"(C_total {cand.c_total[cand.best]:.4f}), wrote {path}")
    return 0


def cmd_navigate(args) -> int:
    sc = _scenario(args)
    if not sc.waypoints:
        raise ConfigError("navigate needs waypoints in the scenario file")
    cfg = shooting.ShootingConfig(
        n_candidates=args.candidates, horizon=min(sc.horizon, 5.0), dt=sc.dt,
        alpha=args.alpha, beta=args.beta, precision=args.precision,
        workers=args.threads, max_sim_time=args.budget)
    log = shooting.navigate(sc.state0, sc.waypoints, sc.grid, sc.robot, cfg,
                            seed=sc.seed, physics=sc.physics)
    lines = [json.dumps({
        "t": r.time, "x": list(map(float, r.state_x)),
        "waypoint": list(map(float, r.waypoint)), "best": r.best,
        "c_tau": r.c_tau, "c_wp": r.c_wp, "c_total": r.c_total,
        "stuck": r.stuck}) for r in log.records]
    atomic_write(_outpath(args, "navigate.jsonl"), "\n".join(lines) + "\n")
    if log.trajectory is not None:
        save_trajectory_csv(_outpath(args, "navigate_trajectory.csv"),
                            log.trajectory)
    print(f"navigate: reached {sum(log.reached)}/{len(log.reached)} waypoints "
          f"in {log.sim_time:.1f} sim-s "
          f"({log.stuck_events} stuck windows), wrote {args.out}/navigate.jsonl")
    return 0 if log.success else 2


def cmd_bench(args) -> int:
    report = benchmark(horizons=args.horizons, batch_sizes=args.batches,
                       repetitions=args.repetitions, dt=args.dt or 0.01,
                       precision=args.precision, workers=args.threads,
                       grid_size=args.grid_size)
    atomic_write(_outpath(args, "bench.json"), report.to_json() + "\n")
    import io

    buf = io.StringIO()
    report.write_csv(buf)
    atomic_write(_outpath(args, "bench.csv"), buf.getvalue())
    for e in report.entries:
        print(f"bench: B={e.batch_size} horizon={e.horizon}s -> "
              f"median {e.median_time:.3f}s ({e.throughput:.0f} rollouts/s)")
    print(f"bench: linear-in-horizon within x{report.linear_slack}: "
          f"{'yes' if report.linearity_ok else 'NO'}")
    return 0 if report.linearity_ok else 2


def cmd_splat(args) -> int:
    points, probs, feats = load_cloud_csv(args.cloud)
    if args.camera:
        cam, ext = load_camera(args.camera)
        # cloud columns are (u, v, d) in this mode
        points = lift_pixel(cam, points[:, 0], points[:, 1], points[:, 2], ext)
    spec = GridSpec((args.origin_x, args.origin_y), args.resolution,
                    args.rows, args.cols)
    cloud = LiftedFeatureCloud(points, probs, feats)
    result = splat(cloud, spec)
    from .terrain import make_grid
    grid = make_grid(spec, h_geom=np.clip(result.features[:, :, 0], -1.0, 1.0))
    save_grid(_outpath(args, "splat.grid"), grid)
    payload = {"dropped": result.dropped,
               "dropped_weight": result.dropped_weight,
               "occupied_cells": int(result.occupied.sum()),
               "total_weight": float(result.weights.sum())}
    _write_json(args, "splat.json", payload)
    print(f"splat: {result.occupied.sum()} occupied cells, "
          f"{result.dropped} dropped points, wrote {args.out}/splat.grid")
    return 0


def cmd_evaluate(args) -> int:
    traj = load_trajectory_csv(args.traj)
    ref = load_trajectory_csv(args.ref)
    payload = {"dx": translation_error(traj, ref),
               "dR": rotation_error(traj, ref)}
    if args.grid and args.grid_target:
        from .losses import masked_grid_loss
        pred = load_grid(args.grid)
        target = load_grid(args.grid_target)
        mask = np.ones(pred.spec.shape())
        payload["H_g_err"] = masked_grid_loss(pred.h_geom, target.h_geom, mask)
        payload["H_t_err"] = masked_grid_loss(pred.h_support, target.h_support,
                                              mask)
    path = _write_json(args, "metrics.json", payload)
    print("evaluate: " + ", ".join(f"{k}={v:.6g}" for k, v in payload.items()
                                   if isinstance(v, float)))
    print(f"evaluate: wrote {path}")
    return 0


# --- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="terradyn",
        description="Differentiable tracked-robot physics on heightmap terrain")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", help="scenario JSON file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--dt", type=float, default=None)
        sp.add_argument("--horizon", type=float, default=None)
        sp.add_argument("--seed", type=int,
                        default=int(os.environ.get("TERRADYN_SEED", "0")))
        sp.add_argument("--threads", type=int,
                        default=int(os.environ.get("TERRADYN_THREADS", "1")))
        sp.add_argument("--precision", choices=("f32", "f64"),
                        default=os.environ.get("TERRADYN_PRECISION", "f32"))
        sp.add_argument("--reproducible", action="store_true",
                        help="omit timestamps from outputs")

    sp = sub.add_parser("simulate", help="roll out a scenario to CSV")
    common(sp)
    sp.add_argument("--forces", action="store_true",
                    help="also write per-point forces (NPZ)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(sp)
    sp.add_argument("--coords-per-leaf", type=int, default=8)
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("identify", help="terrain identification by descent")
    common(sp)
    sp.add_argument("--reference", help="reference trajectory CSV "
                    "(default: self-generated, then start from flat)")
    sp.add_argument("--layers", default="heights")
    sp.add_argument("--step-size", type=float, default=0.5)
    sp.add_argument("--iterations", type=int, default=200)
    sp.set_defaults(func=cmd_identify)

    sp = sub.add_parser("shoot", help="one shooting round toward a waypoint")
    common(sp)
    sp.add_argument("--candidates", type=int, default=64)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--beta", type=float, default=1.0)
    sp.set_defaults(func=cmd_shoot)

    sp = sub.add_parser("navigate", help="receding-horizon waypoint following")
    common(sp)
    sp.add_argument("--candidates", type=int, default=64)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--beta", type=float, default=1.0)
    sp.add_argument("--budget", type=float, default=120.0,
                    help="simulated-time budget [s]")
    sp.set_defaults(func=cmd_navigate)

    sp = sub.add_parser("bench", help="throughput benchmark")
    common(sp)
    sp.add_argument("--horizons", type=float, nargs="+", default=(1.0, 2.0, 5.0))
    sp.add_argument("--batches", type=int, nargs="+", default=(64, 512))
    sp.add_argument("--repetitions", type=int, default=3)
    sp.add_argument("--grid-size", type=int, default=128)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("splat", help="rasterize a feature cloud to a grid")
    common(sp)
    sp.add_argument("--cloud", required=True,
                    help="CSV: x,y,z[,p[,features...]] (or u,v,d with --camera)")
    sp.add_argument("--camera", help="camera JSON (K + optional extrinsic)")
    sp.add_argument("--rows", type=int, default=64)
    sp.add_argument("--cols", type=int, default=64)
    sp.add_argument("--resolution", type=float, default=0.1)
    sp.add_argument("--origin-x", type=float, default=0.0)
    sp.add_argument("--origin-y", type=float, default=0.0)
    sp.set_defaults(func=cmd_splat)

    sp = sub.add_parser("evaluate", help="trajectory/grid error metrics")
    common(sp)
    sp.add_argument("--traj", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--grid")
    sp.add_argument("--grid-target")
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except _NUMERICAL_ERRORS as exc:
        print(f"error: numerical: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as exc:
        print(f"error: validation: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except TerradynError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
