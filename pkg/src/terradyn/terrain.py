"""Layered terrain grid: continuous sampling, surface normals, and file I/O.

The grid is a regular 2-D lattice over the ground plane.  Cell (r, c) is
centered at ``origin_xy + (c * resolution, r * resolution)``; layer arrays are
indexed ``[r, c]`` (row = y index, col = x index).  All layers share the same
lattice.  Grids are immutable after construction: every mutating operation
returns a new grid.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, OutOfBoundsError

HEIGHT_BOUND = 1.0  # |height| cap [m]

HEIGHT_LAYERS = ("h_geom", "h_support", "delta_h")
LAYER_NAMES = ("h_geom", "h_support", "delta_h", "stiffness", "damping", "friction")

DEFAULT_STIFFNESS = 1000.0  # N/m per contact point
DEFAULT_DAMPING = 50.0      # N*s/m per contact point
DEFAULT_FRICTION = 1.0

_GRID_MAGIC = b"TDGRID1\n"


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the lattice: origin of cell (0,0) center, cell size, shape."""

    origin_xy: tuple[float, float]
    resolution: float
    rows: int
    cols: int

    def __post_init__(self):
        if self.resolution <= 0:
            raise ConfigError(f"resolution must be > 0, got {self.resolution}")
        if self.rows < 2 or self.cols < 2:
            raise ConfigError(f"grid needs at least 2x2 cells, got {self.rows}x{self.cols}")

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) spanned by cell centers."""
        ox, oy = self.origin_xy
        return (ox, ox + (self.cols - 1) * self.resolution,
                oy, oy + (self.rows - 1) * self.resolution)

    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)


def _full(spec: GridSpec, value: float) -> np.ndarray:
    return np.full(spec.shape(), float(value), dtype=np.float64)


@dataclass(frozen=True)
class TerrainGrid:
    """Immutable stack of terrain property layers over one GridSpec.

    ``h_support = h_geom - delta_h`` is maintained at construction; heights are
    clamped to [-HEIGHT_BOUND, +HEIGHT_BOUND].
    """

    spec: GridSpec
    h_geom: np.ndarray
    delta_h: np.ndarray
    stiffness: np.ndarray
    damping: np.ndarray
    friction: np.ndarray
    oob_policy: str = "clamp"  # "clamp" | "error"
    h_support: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        shape = self.spec.shape()
        for name in ("h_geom", "delta_h", "stiffness", "damping", "friction"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            if arr.shape != shape:
                raise ConfigError(f"layer {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"layer {name} contains non-finite values")
            object.__setattr__(self, name, arr)
        if self.oob_policy not in ("clamp", "error"):
            raise ConfigError(f"unknown out-of-bounds policy {self.oob_policy!r}")
        for name in ("stiffness", "damping", "friction"):
            if np.any(getattr(self, name) < 0):
                raise ConfigError(f"layer {name} must be non-negative")
        # Height bounds are not checked here: clamp_heights (applied by world
        # generation and every identification step) is the enforcement point.
        object.__setattr__(self, "h_support", self.h_geom - self.delta_h)
        for name in ("h_geom", "delta_h", "h_support", "stiffness", "damping", "friction"):
            getattr(self, name).setflags(write=False)

    def layer(self, name: str) -> np.ndarray:
        if name not in LAYER_NAMES:
            raise ConfigError(f"unknown layer {name!r}; expected one of {LAYER_NAMES}")
        return getattr(self, name)

    def with_layers(self, **layers: np.ndarray) -> "TerrainGrid":
        """New grid with some layers replaced (whole-grid replacement)."""
        known = {}
        for name, arr in layers.items():
            if name == "h_support":
                # h_support is derived: express the update through h_geom.
                known["h_geom"] = np.asarray(arr) + layers.get("delta_h", self.delta_h)
            elif name in ("h_geom", "delta_h", "stiffness", "damping", "friction"):
                known[name] = arr
            else:
                raise ConfigError(f"unknown layer {name!r}")
        return replace(self, **known)


def make_grid(spec: GridSpec, h_geom=None, delta_h=None, stiffness=None,
              damping=None, friction=None, oob_policy: str = "clamp") -> TerrainGrid:
    """Build a grid, filling unspecified layers with scenario defaults."""
    def pick(arr, default):
        if arr is None:
            return _full(spec, default)
        arr = np.asarray(arr, dtype=np.float64)
        return np.broadcast_to(arr, spec.shape()).copy() if arr.ndim == 0 else arr

    return TerrainGrid(
        spec=spec,
        h_geom=pick(h_geom, 0.0),
        delta_h=pick(delta_h, 0.0),
        stiffness=pick(stiffness, DEFAULT_STIFFNESS),
        damping=pick(damping, DEFAULT_DAMPING),
        friction=pick(friction, DEFAULT_FRICTION),
        oob_policy=oob_policy,
    )


@dataclass(frozen=True)
class TerrainSample:
    """Continuous terrain query result at one (x, y)."""

    height: float
    normal: np.ndarray  # unit, normal[2] > 0
    stiffness: float
    damping: float
    friction: float


# --- continuous sampling -----------------------------------------------------

def grid_coords(spec: GridSpec, x, y):
    """World (x, y) -> fractional grid coordinates (gx along cols, gy along rows)."""
    ox, oy = spec.origin_xy
    inv = 1.0 / spec.resolution
    return (np.asarray(x, dtype=np.float64) - ox) * inv, (np.asarray(y, dtype=np.float64) - oy) * inv


def check_bounds(grid: TerrainGrid, x, y):
    """Raise OutOfBoundsError under the hard-error policy; no-op when clamping."""
    if grid.oob_policy != "error":
        return
    xmin, xmax, ymin, ymax = grid.spec.extent
    x = np.asarray(x)
    y = np.asarray(y)
    if np.any(x < xmin) or np.any(x > xmax) or np.any(y < ymin) or np.any(y > ymax):
        raise OutOfBoundsError(
            f"query outside grid extent x:[{xmin},{xmax}] y:[{ymin},{ymax}]")


def bilinear_indices(spec: GridSpec, gx, gy):
    """Corner flat indices and fractional weights for bilinear interpolation.

    Coordinates outside the lattice clamp to the border cell with zero slope
    (tx/ty saturate at 0 or 1), matching the default out-of-bounds policy.
    """
    ix0 = np.clip(np.floor(gx), 0, spec.cols - 2).astype(np.intp)
    iy0 = np.clip(np.floor(gy), 0, spec.rows - 2).astype(np.intp)
    tx = np.clip(gx - ix0, 0.0, 1.0)
    ty = np.clip(gy - iy0, 0.0, 1.0)
    base = iy0 * spec.cols + ix0
    return (base, base + 1, base + spec.cols, base + spec.cols + 1), tx, ty


def _interp_flat(flat: np.ndarray, idx, tx, ty):
    i00, i01, i10, i11 = idx
    w00 = (1.0 - tx) * (1.0 - ty)
    w01 = tx * (1.0 - ty)
    w10 = (1.0 - tx) * ty
    w11 = tx * ty
    return (w00 * np.take(flat, i00) + w01 * np.take(flat, i01)
            + w10 * np.take(flat, i10) + w11 * np.take(flat, i11))


def sample_at(grid: TerrainGrid, layer: str, x, y):
    """Bilinear sample of one layer at world (x, y).  Vectorized over x, y."""
    check_bounds(grid, x, y)
    gx, gy = grid_coords(grid.spec, x, y)
    idx, tx, ty = bilinear_indices(grid.spec, gx, gy)
    out = _interp_flat(grid.layer(layer).ravel(), idx, tx, ty)
    return float(out) if np.ndim(x) == 0 and np.ndim(y) == 0 else out


def slope_operator(spec: GridSpec):
    """Gather indices and inverse spans realizing per-node central differences.

    slope_x = (h[east] - h[west]) * inv_span_x, one-sided at the borders.
    Expressed as flat gathers so the differentiable path can apply the exact
    same operator to a height-layer tensor.
    """
    r = np.arange(spec.rows)[:, None]
    c = np.arange(spec.cols)[None, :]
    ce = np.minimum(c + 1, spec.cols - 1)
    cw = np.maximum(c - 1, 0)
    rn = np.minimum(r + 1, spec.rows - 1)
    rs = np.maximum(r - 1, 0)
    idx_e = (r * spec.cols + ce).ravel()
    idx_w = (r * spec.cols + cw).ravel()
    idx_n = (rn * spec.cols + c).ravel()
    idx_s = (rs * spec.cols + c).ravel()
    inv_x = np.broadcast_to(1.0 / ((ce - cw) * spec.resolution), spec.shape()).ravel()
    inv_y = np.broadcast_to(1.0 / ((rn - rs) * spec.resolution), spec.shape()).ravel()
    return idx_e, idx_w, inv_x, idx_n, idx_s, inv_y


def slope_layers(grid: TerrainGrid, layer: str = "h_support"):
    """Per-node dh/dx and dh/dy by central differences (one-sided at borders).

    Bilinear interpolation of these node slopes equals, at every interior
    query, the central difference of the interpolated surface with step = one
    cell, so surface_sample and the rollout kernel can share them.
    """
    h = grid.layer(layer).ravel()
    idx_e, idx_w, inv_x, idx_n, idx_s, inv_y = slope_operator(grid.spec)
    sx = ((np.take(h, idx_e) - np.take(h, idx_w)) * inv_x).reshape(grid.spec.shape())
    sy = ((np.take(h, idx_n) - np.take(h, idx_s)) * inv_y).reshape(grid.spec.shape())
    return sx, sy


def surface_sample(grid: TerrainGrid, layer: str, x: float, y: float) -> TerrainSample:
    """Height, unit surface normal, and material properties at world (x, y)."""
    check_bounds(grid, x, y)
    gx, gy = grid_coords(grid.spec, x, y)
    idx, tx, ty = bilinear_indices(grid.spec, gx, gy)
    h = float(_interp_flat(grid.layer(layer).ravel(), idx, tx, ty))
    sx_l, sy_l = slope_layers(grid, layer)
    sx = float(_interp_flat(sx_l.ravel(), idx, tx, ty))
    sy = float(_interp_flat(sy_l.ravel(), idx, tx, ty))
    n = np.array([-sx, -sy, 1.0])
    n /= np.sqrt(n @ n)
    return TerrainSample(
        height=h,
        normal=n,
        stiffness=float(_interp_flat(grid.stiffness.ravel(), idx, tx, ty)),
        damping=float(_interp_flat(grid.damping.ravel(), idx, tx, ty)),
        friction=float(_interp_flat(grid.friction.ravel(), idx, tx, ty)),
    )


def clamp_heights(grid: TerrainGrid) -> TerrainGrid:
    """Clip height layers into [-HEIGHT_BOUND, +HEIGHT_BOUND]; others untouched."""
    h_geom = np.clip(grid.h_geom, -HEIGHT_BOUND, HEIGHT_BOUND)
    # keep h_support within bounds as well: shrink delta_h where needed
    h_support = np.clip(h_geom - grid.delta_h, -HEIGHT_BOUND, HEIGHT_BOUND)
    return replace(grid, h_geom=h_geom, delta_h=h_geom - h_support)


# --- file formats ------------------------------------------------------------

def save_grid(path, grid: TerrainGrid) -> None:
    """Write the grid file: JSON header + one row-major float32-LE blob per layer."""
    header = {
        "origin_xy": list(grid.spec.origin_xy),
        "resolution": grid.spec.resolution,
        "rows": grid.spec.rows,
        "cols": grid.spec.cols,
        "layers": ["h_geom", "delta_h", "stiffness", "damping", "friction"],
        "dtype": "<f4",
        "oob_policy": grid.oob_policy,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(_GRID_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in header["layers"]:
            f.write(np.ascontiguousarray(grid.layer(name), dtype="<f4").tobytes())


def load_grid(path) -> TerrainGrid:
    with open(path, "rb") as f:
        if f.read(len(_GRID_MAGIC)) != _GRID_MAGIC:
            raise ConfigError(f"{path}: not a terrain grid file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        spec = GridSpec(tuple(header["origin_xy"]), header["resolution"],
                        header["rows"], header["cols"])
        n = spec.rows * spec.cols
        itemsize = np.dtype(header["dtype"]).itemsize
        layers = {}
        for name in header["layers"]:
            raw = f.read(n * itemsize)
            layers[name] = np.frombuffer(raw, dtype=header["dtype"]).reshape(
                spec.shape()).astype(np.float64)
    return TerrainGrid(spec=spec, oob_policy=header.get("oob_policy", "clamp"), **layers)


def load_grid_csv(path, origin_xy=(0.0, 0.0), resolution=0.1, **layer_defaults) -> TerrainGrid:
    """Import a plain-text CSV of heights (row-major) as the geometric layer."""
    h = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    spec = GridSpec(tuple(origin_xy), resolution, h.shape[0], h.shape[1])
    return make_grid(spec, h_geom=h, **layer_defaults)
