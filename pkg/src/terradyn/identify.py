"""Terrain identification: gradient descent through the rollout.

Given a reference trajectory (typically produced by the engine itself on an
unknown grid), iteratively updates learnable terrain layers so the simulated
trajectory matches it.  Plain clipped gradient descent with a fixed step;
heavy-ball momentum behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffsim import TrackingLoss, backward, record_rollout
from .dynamics import PhysicsConfig, RigidState, Trajectory
from .errors import ConfigError, DivergedError
from .robot import RobotModel
from .terrain import TerrainGrid, clamp_heights

LEARNABLE_LAYERS = ("heights", "friction", "stiffness", "damping")

_LAYER_BOUNDS = {"friction": (1e-3, 10.0), "stiffness": (1.0, 1e6),
                 "damping": (0.0, 1e4)}


@dataclass(frozen=True)
class IdentifyConfig:
    layers: tuple = ("heights",)
    step_size: float = 0.5
    iterations: int = 200
    clip_norm: float = 1.0
    momentum: float = 0.0             # heavy-ball coefficient; 0 disables
    footprint_radius: float = 1.0     # height updates limited near the path [m]
    smoothness_weight: float = 0.0    # optional Laplacian regularizer on heights
    checkpoint_every: int = 50
    diverged_factor: float = 10.0
    diverged_patience: int = 20
    # bold-driver step adaptation: grow the step while the loss improves,
    # shrink and restart from the best iterate when it regresses
    adaptive: bool = True
    step_growth: float = 1.1
    step_shrink: float = 0.5
    # treat each material layer (friction/stiffness/damping) as one shared
    # coefficient: the gradient is summed over cells and applied uniformly
    tie_materials: bool = False

    def __post_init__(self):
        if self.step_size <= 0:
            raise ConfigError("step size must be > 0")
        if self.iterations < 1:
            raise ConfigError("iteration budget must be >= 1")
        for layer in self.layers:
            if layer not in LEARNABLE_LAYERS:
                raise ConfigError(f"unknown learnable layer {layer!r}")


@dataclass(frozen=True)
class IdentifyResult:
    grid: TerrainGrid                 # best-so-far grid
    loss_history: np.ndarray          # (iters + 1,) loss per iterate
    best_loss: float
    best_iteration: int


def footprint_mask(grid: TerrainGrid, reference: Trajectory,
                   radius: float) -> np.ndarray:
    """Cells within ``radius`` of any reference position (bool, grid-shaped)."""
    spec = grid.spec
    xx = spec.origin_xy[0] + np.arange(spec.cols) * spec.resolution
    yy = spec.origin_xy[1] + np.arange(spec.rows) * spec.resolution
    X, Y = np.meshgrid(xx, yy)
    mask = np.zeros(spec.shape(), dtype=bool)
    r2 = radius * radius
    for p in reference.xs:
        mask |= (X - p[0]) ** 2 + (Y - p[1]) ** 2 <= r2
    return mask


def _clip_grad(g: np.ndarray, clip_norm: float) -> np.ndarray:
    n = float(np.linalg.norm(g))
    if clip_norm > 0 and n > clip_norm:
        return g * (clip_norm / n)
    return g


def _laplacian(h: np.ndarray) -> np.ndarray:
    lap = -4.0 * h
    lap[1:, :] += h[:-1, :]
    lap[:-1, :] += h[1:, :]
    lap[:, 1:] += h[:, :-1]
    lap[:, :-1] += h[:, 1:]
    return lap


def identify(grid0: TerrainGrid, reference: Trajectory, schedule,
             robot: RobotModel, cfg: IdentifyConfig = IdentifyConfig(),
             physics: PhysicsConfig = PhysicsConfig(),
             state0: RigidState | None = None,
             callback=None) -> IdentifyResult:
    """Minimize the trajectory loss over the learnable layers of ``grid0``.

    The reference must cover the rollout horizon on the same time lattice
    (states at every step).  Returns the best-so-far grid and the full loss
    history; raises DivergedError after ``diverged_patience`` consecutive
    iterations above ``diverged_factor`` times the initial loss.
    """
    if state0 is None:
        state0 = reference.state(0)
    dt = float(reference.times[1] - reference.times[0])
    horizon = float(reference.times[-1] - reference.times[0])
    loss_fn = TrackingLoss(reference.xs)

    grid = grid0
    fmask = None
    if "heights" in cfg.layers and cfg.footprint_radius > 0:
        fmask = footprint_mask(grid0, reference, cfg.footprint_radius)

    velocity = {layer: 0.0 for layer in cfg.layers}
    history = []
    best_loss, best_grid, best_it = np.inf, grid0, 0
    bad_streak = 0
    initial = None
    scale = 1.0
    for it in range(cfg.iterations + 1):
        rec = record_rollout(state0, schedule, grid, robot, dt, horizon,
                             physics, leaves=cfg.layers,
                             checkpoint_every=cfg.checkpoint_every)
        bundle = backward(rec, loss_fn)
        loss = bundle.loss
        history.append(loss)
        if loss < best_loss:
            best_loss, best_grid, best_it = loss, grid, it
            if cfg.adaptive:
                scale *= cfg.step_growth
        elif cfg.adaptive and it > 0:
            # regression: shrink the step and restart from the best iterate
            scale = max(scale * cfg.step_shrink, 1e-6)
            grid = best_grid
            velocity = {layer: 0.0 for layer in cfg.layers}
        if initial is None:
            initial = loss if loss > 0 else 1.0
        bad_streak = bad_streak + 1 if loss > cfg.diverged_factor * initial else 0
        if bad_streak >= cfg.diverged_patience:
            raise DivergedError(
                f"loss above {cfg.diverged_factor}x initial for "
                f"{cfg.diverged_patience} consecutive iterations")
        if callback is not None:
            callback(it, loss, grid, bundle)
        if it == cfg.iterations:
            break

        updates = {}
        for layer in cfg.layers:
            g = bundle.grads[layer]
            if layer == "heights":
                if cfg.smoothness_weight > 0:
                    g = g - cfg.smoothness_weight * _laplacian(grid.h_geom)
                if fmask is not None:
                    g = np.where(fmask, g, 0.0)
            elif cfg.tie_materials:
                g = np.full_like(g, g.sum())
            step = _clip_grad(g, cfg.clip_norm) * cfg.step_size * scale
            if cfg.momentum > 0:
                velocity[layer] = cfg.momentum * velocity[layer] + step
                step = velocity[layer]
            updates[layer] = step

        layers = {}
        if "heights" in updates:
            layers["h_geom"] = grid.h_geom - updates["heights"]
        for layer in ("friction", "stiffness", "damping"):
            if layer in updates:
                lo, hi = _LAYER_BOUNDS[layer]
                layers[layer] = np.clip(grid.layer(layer) - updates[layer], lo, hi)
        grid = clamp_heights(grid.with_layers(**layers))

    return IdentifyResult(best_grid, np.asarray(history), best_loss, best_it)
