#!/usr/bin/env python3
"""Receding-horizon navigation demo on a procedurally generated world.

Drives the default tracked robot through a list of waypoints with
sample-and-argmin shooting and prints one line per replanning step.
"""

import argparse
import sys

import numpy as np

from terradyn.dynamics import RigidState
from terradyn.robot import build_tracked_robot
from terradyn.shooting import ShootingConfig, navigate
from terradyn.terrain import GridSpec, surface_sample
from terradyn.worlds import generate_world


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--world", default="flat",
                    choices=("flat", "slope", "bump-field", "ridge", "stairs"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--candidates", type=int, default=32)
    ap.add_argument("--horizon", type=float, default=1.5)
    ap.add_argument("--budget", type=float, default=60.0,
                    help="simulated-time budget [s]")
    ap.add_argument("--waypoints", type=float, nargs="+",
                    default=(4.0, 3.2), metavar="X Y",
                    help="flat list of x y pairs")
    args = ap.parse_args(argv)
    if len(args.waypoints) % 2:
        ap.error("waypoints must come in x y pairs")

    spec = GridSpec((0.0, 0.0), 0.1, 64, 64)
    grid = generate_world(args.world, spec, seed=args.seed)
    robot = build_tracked_robot()
    x0, y0 = 1.0137, 3.1712
    z0 = surface_sample(grid, "h_support", x0, y0).height + 0.155
    start = RigidState.rest((x0, y0, z0), yaw=0.0731)
    wps = [np.array([x, y, z0])
           for x, y in zip(args.waypoints[::2], args.waypoints[1::2])]

    cfg = ShootingConfig(n_candidates=args.candidates, horizon=args.horizon,
                         dt=0.01, replan_every=0.5, steps_per_candidate=3,
                         precision="f32", max_sim_time=args.budget)
    log = navigate(start, wps, grid, robot, cfg, seed=args.seed)

    for rec in log.records:
        flag = " STUCK" if rec.stuck else ""
        print(f"t={rec.time:6.2f}s  pos=({rec.state_x[0]:5.2f}, "
              f"{rec.state_x[1]:5.2f})  wp=({rec.waypoint[0]:.2f}, "
              f"{rec.waypoint[1]:.2f})  C={rec.c_total:.3f}{flag}")
    print(f"\nreached {sum(log.reached)}/{len(log.reached)} waypoints in "
          f"{log.sim_time:.1f} simulated s "
          f"({'success' if log.success else 'failure'})")
    return 0 if log.success else 2


if __name__ == "__main__":
    sys.exit(main())
