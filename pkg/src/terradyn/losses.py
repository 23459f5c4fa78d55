"""Trajectory and grid losses plus the evaluation metrics.

All functions are pure and numpy-only.  The differentiable path re-expresses
the trajectory loss on the tape; these are the reference definitions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllMaskedError, ConfigError, EmptyOverlapError


@dataclass(frozen=True)
class MaskedGrid:
    """Grid values with a non-negative per-cell weight array."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if v.shape != w.shape:
            raise ConfigError("values and weights must share a shape")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ConfigError("weights must be finite and non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)


def _matched_positions(traj, ref):
    """Positions of ref resampled onto traj.times by linear interpolation."""
    t = np.asarray(traj.times, dtype=np.float64)
    rt = np.asarray(ref.times, dtype=np.float64)
    if t[0] > rt[-1] or t[-1] < rt[0]:
        raise EmptyOverlapError("trajectory time ranges do not overlap")
    if len(rt) == len(t) and np.array_equal(rt, t):
        return np.asarray(traj.xs, dtype=np.float64), np.asarray(ref.xs, dtype=np.float64)
    keep = (t >= rt[0]) & (t <= rt[-1])
    if not np.any(keep):
        raise EmptyOverlapError("no matched samples in the common time range")
    xr = np.stack([np.interp(t[keep], rt, np.asarray(ref.xs)[:, k]) for k in range(3)],
                  axis=1)
    return np.asarray(traj.xs, dtype=np.float64)[keep], xr


def trajectory_loss(traj, ref, include_orientation: bool = False,
                    orientation_weight: float = 1.0) -> float:
    """Mean squared position difference over matched samples.

    Orientation is excluded by default; with ``include_orientation`` a mean
    squared geodesic angle term is added.
    """
    xa, xb = _matched_positions(traj, ref)
    loss = float(np.mean(np.sum((xa - xb) ** 2, axis=1)))
    if include_orientation:
        ang = _geodesic_angles(np.asarray(traj.Rs), np.asarray(ref.Rs))
        loss += orientation_weight * float(np.mean(ang ** 2))
    return loss


def masked_grid_loss(pred: np.ndarray, target: np.ndarray, weights: np.ndarray) -> float:
    """||W o (pred - target)||^2 normalized by the number of active cells."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != w.shape:
        raise ConfigError("pred, target, and weights must share a shape")
    active = np.count_nonzero(w > 0)
    if active == 0:
        raise AllMaskedError("weight mask is zero everywhere")
    return float(np.sum((w * (pred - target)) ** 2) / active)


def translation_error(traj, ref, rmse: bool = False) -> float:
    """Delta-x metric: sqrt of the mean of position-error *norms*.

    This follows the published formula literally (the norms are not squared);
    ``rmse=True`` selects the conventional sqrt-of-mean-squared variant.
    """
    xa, xb = _matched_positions(traj, ref)
    norms = np.linalg.norm(xa - xb, axis=1)
    return float(np.sqrt(np.mean(norms ** 2 if rmse else norms)))


def _geodesic_angles(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    tr = np.einsum("tij,tij->t", Ra, Rb)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def rotation_error(traj, ref) -> float:
    """Delta-R metric: mean geodesic angle between matched orientations [rad]."""
    Ra = np.asarray(traj.Rs, dtype=np.float64)
    Rb = np.asarray(ref.Rs, dtype=np.float64)
    if Ra.shape != Rb.shape:
        raise ConfigError("rotation histories must share a shape (matched timestamps)")
    return float(np.mean(_geodesic_angles(Ra, Rb)))
