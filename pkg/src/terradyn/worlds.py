"""Synthetic terrain generators for tests, benchmarks, and CLI scenarios.

Every generator is deterministic given its seed and clamps heights into the
grid's legal range.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .terrain import GridSpec, TerrainGrid, clamp_heights, make_grid

WORLD_KINDS = ("flat", "slope", "bump-field", "ridge", "stairs")


def generate_world(kind: str, spec: GridSpec, seed: int = 0,
                   oob_policy: str = "clamp", **params) -> TerrainGrid:
    """Build a named synthetic world on ``spec``.

    Parameters by kind (all optional):

    * ``slope``: ``angle_deg`` (default 10), uphill along +x
    * ``bump-field``: ``n_bumps`` (8), ``height`` (0.2), ``radius`` (0.4)
    * ``ridge``: ``height`` (0.4), ``width`` (0.5), ``x`` (center of extent)
    * ``stairs``: ``step_height`` (0.1), ``step_length`` (0.5)

    Material layers accept ``stiffness`` / ``damping`` / ``friction``
    overrides (scalar or array) like :func:`terradyn.terrain.make_grid`.
    """
    xx = spec.origin_xy[0] + np.arange(spec.cols) * spec.resolution
    yy = spec.origin_xy[1] + np.arange(spec.rows) * spec.resolution
    X, Y = np.meshgrid(xx, yy)
    layers = {k: params.pop(k) for k in ("stiffness", "damping", "friction")
              if k in params}

    if kind == "flat":
        h = np.zeros(spec.shape())
    elif kind == "slope":
        angle = np.deg2rad(params.pop("angle_deg", 10.0))
        h = np.tan(angle) * (X - xx[0])
        h -= h.mean()
    elif kind == "bump-field":
        rng = np.random.default_rng(seed)
        n = int(params.pop("n_bumps", 8))
        amp = params.pop("height", 0.2)
        rad = params.pop("radius", 0.4)
        h = np.zeros(spec.shape())
        for _ in range(n):
            cx = rng.uniform(xx[0], xx[-1])
            cy = rng.uniform(yy[0], yy[-1])
            a = rng.uniform(0.3, 1.0) * amp
            h += a * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * rad ** 2))
    elif kind == "ridge":
        amp = params.pop("height", 0.4)
        width = params.pop("width", 0.5)
        cx = params.pop("x", 0.5 * (xx[0] + xx[-1]))
        h = amp * np.exp(-((X - cx) ** 2) / (2 * (width / 2.355) ** 2))
    elif kind == "stairs":
        sh = params.pop("step_height", 0.1)
        sl = params.pop("step_length", 0.5)
        h = sh * np.floor((X - xx[0]) / sl)
        h -= h.mean()
    else:
        raise ConfigError(f"unknown world kind {kind!r}; expected one of {WORLD_KINDS}")
    if params:
        raise ConfigError(f"unknown world parameters {sorted(params)} for kind {kind!r}")
    return clamp_heights(make_grid(spec, h_geom=h, oob_policy=oob_policy, **layers))
