"""Reverse-mode gradients through Euler rollouts.

The forward pass is the plain float64 rollout; its full state history doubles
as a checkpoint store.  The backward pass replays the rollout in segments of
``checkpoint_every`` steps, last segment first, recording each on a fresh
:class:`~terradyn.tape.Tape`.  The adjoint of the segment's initial state is
carried to the previous segment, and leaf gradients accumulate across
segments, so peak tape size is bounded by the segment length rather than the
horizon.

Because the recorded path runs the exact kernel op sequence of the plain
path, replayed primals bit-match the stored history and segment stitching is
exact.

Supported leaves (see :data:`LEAF_NAMES`):

* ``heights``   — support heights, gradient shaped (rows, cols); equals the
  gradient with respect to the geometric heights at fixed clearance offset
* ``stiffness``, ``damping``, ``friction`` — terrain layers, (rows, cols)
* ``controls``  — compiled per-step track speeds, (S, 2)
* ``state0``    — 12-vector [x, v, rotation tangent, omega]; the rotation is
  parametrized as R0 @ expm([theta]x) (series-truncated), evaluated at 0
* ``mass``      — total robot mass, scalar; the inertia tensor is assumed to
  scale with it
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import (PhysicsConfig, RigidState, Trajectory, _PoseCache,
                       _physics_dicts, compile_schedule, n_steps_for,
                       rollout_arrays)
from .errors import ConfigError, NonFiniteError
from .robot import RobotModel
from .stepmath import dynamics_step
from .tape import DEFAULT_NODE_BUDGET, Tape, TapeOps, Tensor
from .terrain import TerrainGrid, slope_operator

LEAF_NAMES = ("heights", "stiffness", "damping", "friction",
              "controls", "state0", "mass")

_LAYER_LEAVES = {
    "heights": ("h", "sx", "sy"),
    "stiffness": ("stiffness",),
    "damping": ("damping",),
    "friction": ("friction",),
}

_STATE_KEYS = ("x", "y", "z", "vx", "vy", "vz", "wx", "wy", "wz",
               "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22")


def array_layers_for(leaves) -> frozenset:
    """Terrain-dict entries that must stay arrays for the given leaf set."""
    out = set()
    for leaf in leaves:
        out.update(_LAYER_LEAVES.get(leaf, ()))
    return frozenset(out)


def _skew(t):
    return np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])


def rotation_tangent_apply(R0: np.ndarray, theta) -> np.ndarray:
    """R0 @ expm([theta]x) with the series truncated at theta^4.

    This is the parametrization both the recorded initial rotation and the
    finite-difference probes use, so the two agree to far below any gradient
    tolerance for |theta| << 1.
    """
    theta = np.asarray(theta, dtype=np.float64)
    t2 = float(theta @ theta)
    A = 1.0 - t2 * (1.0 / 6.0) + (t2 * t2) * (1.0 / 120.0)
    B = 0.5 - t2 * (1.0 / 24.0) + (t2 * t2) * (1.0 / 720.0)
    K = _skew(theta)
    return np.asarray(R0) @ (np.eye(3) + A * K + B * (K @ K))


def scaled_robot(robot: RobotModel, total_mass: float) -> RobotModel:
    """Same geometry with all point masses (and hence inertia) rescaled."""
    if total_mass <= 0:
        raise ConfigError("total mass must be > 0")
    f = total_mass / robot.total_mass
    return replace(robot, masses=robot.masses * f, total_mass=total_mass,
                   inertia=robot.inertia * f)


# --- losses ----------------------------------------------------------------

class TrackingLoss:
    """Weighted squared error against per-state reference positions.

    L = sum_i w_i * (|x_i - x*_i|^2 [+ |R_i - R*_i|^2_F]) over the S+1 rollout
    states; weights default to 1/(S+1), matching the mean-squared trajectory
    loss.  Being quadratic in the stored states, its per-state adjoints are
    closed-form, which is all the backward sweep needs.
    """

    def __init__(self, ref_xs, ref_Rs=None, weights=None):
        self.ref_xs = np.asarray(ref_xs, dtype=np.float64)
        if self.ref_xs.ndim != 2 or self.ref_xs.shape[1] != 3:
            raise ConfigError("ref_xs must be (M, 3)")
        self.ref_Rs = None if ref_Rs is None else np.asarray(ref_Rs, dtype=np.float64)
        if self.ref_Rs is not None and self.ref_Rs.shape != (len(self.ref_xs), 3, 3):
            raise ConfigError("ref_Rs must be (M, 3, 3)")
        if weights is None:
            weights = np.full(len(self.ref_xs), 1.0 / len(self.ref_xs))
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (len(self.ref_xs),):
            raise ConfigError("weights must be (M,)")

    @classmethod
    def final_position(cls, target, n_states: int) -> "TrackingLoss":
        """|x_S - target|^2 on the last state only."""
        ref = np.zeros((n_states, 3))
        ref[-1] = np.asarray(target, dtype=np.float64)
        w = np.zeros(n_states)
        w[-1] = 1.0
        return cls(ref, weights=w)

    @property
    def n_states(self) -> int:
        return len(self.ref_xs)

    def evaluate(self, xs, Rs=None) -> float:
        xs = np.asarray(xs)
        if xs.shape != self.ref_xs.shape:
            raise ConfigError(
                f"trajectory has {len(xs)} states, loss expects {self.n_states}")
        val = float(self.weights @ np.sum((xs - self.ref_xs) ** 2, axis=1))
        if self.ref_Rs is not None:
            d = np.asarray(Rs) - self.ref_Rs
            val += float(self.weights @ np.sum(d * d, axis=(1, 2)))
        return val

    def adjoint(self, i: int, x_val, R_val):
        """(dL/dx_i, dL/dR_i or None) evaluated at the stored state."""
        gx = 2.0 * self.weights[i] * (np.asarray(x_val) - self.ref_xs[i])
        gR = None
        if self.ref_Rs is not None:
            gR = 2.0 * self.weights[i] * (np.asarray(R_val) - self.ref_Rs[i])
        return gx, gR


class StateLinearLoss:
    """L = sum_i c_i . x_i for caller-supplied per-state coefficients.

    Handy for probing single state coordinates (e.g. the final height).
    """

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=np.float64)
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != 3:
            raise ConfigError("coeffs must be (M, 3)")

    @classmethod
    def final_coordinate(cls, axis: int, n_states: int) -> "StateLinearLoss":
        c = np.zeros((n_states, 3))
        c[-1, axis] = 1.0
        return cls(c)

    @property
    def n_states(self) -> int:
        return len(self.coeffs)

    def evaluate(self, xs, Rs=None) -> float:
        xs = np.asarray(xs)
        if xs.shape != self.coeffs.shape:
            raise ConfigError(
                f"trajectory has {len(xs)} states, loss expects {self.n_states}")
        return float(np.sum(self.coeffs * xs))

    def adjoint(self, i: int, x_val, R_val):
        return self.coeffs[i].copy(), None


# --- recording -------------------------------------------------------------

@dataclass(frozen=True)
class RecordedRollout:
    """Plain forward rollout plus everything needed to replay segments."""

    trajectory: Trajectory
    state0: RigidState
    u: np.ndarray       # compiled controls, (S, 2)
    flips: np.ndarray   # flipper angles, (S, 4)
    grid: TerrainGrid
    robot: RobotModel
    physics: PhysicsConfig
    dt: float
    leaves: tuple
    checkpoint_every: int
    node_budget: int

    @property
    def n_steps(self) -> int:
        return self.u.shape[0]


@dataclass(frozen=True)
class GradientBundle:
    loss: float
    grads: dict
    trajectory: Trajectory
    # largest replay-tape node count across segments; pinned in tests as the
    # memory contract (nodes grow linearly in steps x contact points)
    peak_tape_nodes: int = 0


def record_rollout(state0: RigidState, schedule, grid: TerrainGrid,
                   robot: RobotModel, dt: float = 0.01, horizon: float = 5.0,
                   physics: PhysicsConfig = PhysicsConfig(),
                   leaves=("heights", "controls"),
                   checkpoint_every: int = 50,
                   node_budget: int = DEFAULT_NODE_BUDGET) -> RecordedRollout:
    """Run the float64 forward rollout and capture the replay inputs."""
    leaves = tuple(leaves)
    for leaf in leaves:
        if leaf not in LEAF_NAMES:
            raise ConfigError(f"unknown gradient leaf {leaf!r}")
    if checkpoint_every < 1:
        raise ConfigError("checkpoint_every must be >= 1")
    n = n_steps_for(horizon, dt)
    u, flips = compile_schedule(schedule, dt, n, physics.max_track_speed)
    out = rollout_arrays(state0.x[None], state0.v[None], state0.R[None],
                         state0.omega[None], u, flips, grid, robot, dt, n,
                         physics, np.float64,
                         array_layers=array_layers_for(leaves))
    if not out["ok"][0]:
        raise NonFiniteError("rollout diverged to non-finite state; shrink dt")
    traj = Trajectory(times=out["times"], xs=out["xs"][0], vs=out["vs"][0],
                      Rs=out["Rs"][0], ws=out["ws"][0],
                      normal_force_sum=out["normal_force_sum"][0])
    return RecordedRollout(traj, state0, u, flips, grid, robot, physics,
                           float(dt), leaves, int(checkpoint_every),
                           int(node_budget))


def _leaf_state_dict(tape: Tape, traj: Trajectory, i: int) -> dict:
    """State components at index i as independent leaves (segment entry)."""
    x, v, R, w = traj.xs[i], traj.vs[i], traj.Rs[i], traj.ws[i]
    vals = {"x": x[0], "y": x[1], "z": x[2],
            "vx": v[0], "vy": v[1], "vz": v[2],
            "wx": w[0], "wy": w[1], "wz": w[2]}
    for r in range(3):
        for c in range(3):
            vals[f"r{r}{c}"] = R[r, c]
    return {k: tape.leaf(np.full((1, 1), val)) for k, val in vals.items()}


def _state0_leaf_dict(tape: Tape, state0: RigidState):
    """Initial state built from the 12 state0 parameters.

    The rotation tangent enters through the truncated exponential series at
    theta = 0, where the recorded rotation values reduce to R0 exactly.
    """
    x_l = [tape.leaf(np.full((1, 1), state0.x[i])) for i in range(3)]
    v_l = [tape.leaf(np.full((1, 1), state0.v[i])) for i in range(3)]
    th = [tape.leaf(np.zeros((1, 1))) for _ in range(3)]
    w_l = [tape.leaf(np.full((1, 1), state0.omega[i])) for i in range(3)]
    st = {"x": x_l[0], "y": x_l[1], "z": x_l[2],
          "vx": v_l[0], "vy": v_l[1], "vz": v_l[2],
          "wx": w_l[0], "wy": w_l[1], "wz": w_l[2]}
    tx, ty, tz = th
    t2 = tx * tx + ty * ty + tz * tz
    A = 1.0 - t2 * (1.0 / 6.0) + (t2 * t2) * (1.0 / 120.0)
    B = 0.5 - t2 * (1.0 / 24.0) + (t2 * t2) * (1.0 / 720.0)
    K = [[0.0, -tz, ty], [tz, 0.0, -tx], [-ty, tx, 0.0]]
    K2 = [[sum_mixed(K[i][k] * K[k][j] for k in range(3)) for j in range(3)]
          for i in range(3)]
    P = [[(1.0 if i == j else 0.0) + A * K[i][j] + B * K2[i][j]
          for j in range(3)] for i in range(3)]
    R0 = state0.R
    for i in range(3):
        for j in range(3):
            st[f"r{i}{j}"] = (R0[i, 0] * P[0][j] + R0[i, 1] * P[1][j]
                              + R0[i, 2] * P[2][j])
    return st, (x_l, v_l, th, w_l)


def sum_mixed(terms):
    """Left-to-right sum of floats and tensors without a 0 start term."""
    it = iter(terms)
    acc = next(it)
    for t in it:
        acc = acc + t
    return acc


def _grad_or_zero(t: Tensor):
    return t.grad if t.grad is not None else np.zeros_like(t.value)


def backward(rec: RecordedRollout, loss: TrackingLoss) -> GradientBundle:
    """Segment-checkpointed reverse sweep; returns accumulated leaf gradients."""
    traj, S = rec.trajectory, rec.n_steps
    if loss.n_states != S + 1:
        raise ConfigError(
            f"loss expects {loss.n_states} states, rollout has {S + 1}")
    loss_value = loss.evaluate(traj.xs, traj.Rs)

    plain_terr, plain_rob, cfg = _physics_dicts(
        rec.grid, rec.robot, rec.physics, np.float64,
        array_layers_for(rec.leaves))
    spec = rec.grid.spec
    slope_idx = slope_operator(spec) if "heights" in rec.leaves else None

    n_cells = spec.rows * spec.cols
    acc = {}
    if "heights" in rec.leaves:
        acc["heights"] = np.zeros(n_cells)
    for name in ("stiffness", "damping", "friction"):
        if name in rec.leaves:
            acc[name] = np.zeros(n_cells)
    if "controls" in rec.leaves:
        acc["controls"] = np.zeros((S, 2))
    if "mass" in rec.leaves:
        acc["mass"] = 0.0

    def comp_adjoints(i):
        gx, gR = loss.adjoint(i, traj.xs[i], traj.Rs[i])
        m = {"x": gx[0], "y": gx[1], "z": gx[2]}
        if gR is not None:
            for r in range(3):
                for c in range(3):
                    m[f"r{r}{c}"] = gR[r, c]
        return m

    C = rec.checkpoint_every
    n_segs = (S + C - 1) // C
    # invariant: adj holds the full dL/d(exit state) for the segment about to
    # be replayed -- backward flow from later segments plus the direct loss
    # term at the boundary index itself
    adj = {key: np.full((1, 1), g) for key, g in comp_adjoints(S).items()}
    peak_nodes = 0
    for k in range(n_segs - 1, -1, -1):
        a, b = k * C, min((k + 1) * C, S)
        tape = Tape(rec.node_budget)
        ops = TapeOps(tape)

        terr = dict(plain_terr)
        if "heights" in rec.leaves:
            idx_e, idx_w, inv_x, idx_n, idx_s, inv_y = slope_idx
            h_t = tape.leaf(plain_terr["h"])
            terr["h"] = h_t
            terr["sx"] = (ops.take(h_t, idx_e) - ops.take(h_t, idx_w)) * inv_x
            terr["sy"] = (ops.take(h_t, idx_n) - ops.take(h_t, idx_s)) * inv_y
        layer_ts = {"heights": terr.get("h")}
        for name in ("stiffness", "damping", "friction"):
            if name in rec.leaves:
                layer_ts[name] = terr[name] = tape.leaf(plain_terr[name])

        rob = dict(plain_rob)
        m_t = None
        if "mass" in rec.leaves:
            m_t = tape.leaf(np.float64(plain_rob["m"]))
            rob["m"] = m_t

        state0_leaves = None
        if k == 0 and "state0" in rec.leaves:
            st, state0_leaves = _state0_leaf_dict(tape, rec.state0)
        else:
            st = _leaf_state_dict(tape, traj, a)
        entry_st = st

        u_ts = []
        if "controls" in rec.leaves:
            for s in range(a, b):
                u_ts.append((tape.leaf(np.full((1, 1), rec.u[s, 0])),
                             tape.leaf(np.full((1, 1), rec.u[s, 1]))))

        poses = _PoseCache(rec.robot, np.float64)
        states = [st]
        for s in range(a, b):
            pts = poses.get(rec.flips[s])
            if u_ts:
                ctrl = {"u_left": u_ts[s - a][0], "u_right": u_ts[s - a][1]}
            else:
                ctrl = {"u_left": rec.u[s:s + 1, 0:1],
                        "u_right": rec.u[s:s + 1, 1:2]}
            st, _ = dynamics_step(ops, st, pts, ctrl, terr, rob, cfg, rec.dt)
            states.append(st)

        seeds = []
        lo = a if k == 0 else a + 1  # entry-state loss is carried via adj
        for i in range(lo, b):  # exit-state loss is already inside adj
            for key, g in comp_adjoints(i).items():
                t = states[i - a][key]
                if isinstance(t, Tensor):
                    seeds.append((t, np.full((1, 1), g)))
        for key, g in adj.items():
            t = states[-1][key]
            if isinstance(t, Tensor):
                seeds.append((t, g))
        tape.backward(seeds)
        peak_nodes = max(peak_nodes, len(tape.nodes))

        if "heights" in rec.leaves:
            acc["heights"] += _grad_or_zero(layer_ts["heights"])
        for name in ("stiffness", "damping", "friction"):
            if name in rec.leaves:
                acc[name] += _grad_or_zero(layer_ts[name])
        if u_ts:
            for s in range(a, b):
                uL, uR = u_ts[s - a]
                acc["controls"][s, 0] = float(np.sum(_grad_or_zero(uL)))
                acc["controls"][s, 1] = float(np.sum(_grad_or_zero(uR)))
        if m_t is not None:
            acc["mass"] += float(np.sum(_grad_or_zero(m_t)))

        if k > 0:
            boundary_loss = comp_adjoints(a)
            adj = {key: _grad_or_zero(entry_st[key]) + boundary_loss.get(key, 0.0)
                   for key in _STATE_KEYS}
        elif state0_leaves is not None:
            x_l, v_l, th, w_l = state0_leaves
            acc["state0"] = np.array(
                [float(np.sum(_grad_or_zero(t))) for grp in (x_l, v_l, th, w_l)
                 for t in grp])

    grads = {}
    for name, g in acc.items():
        if name in _LAYER_LEAVES:
            g = np.asarray(g).reshape(spec.shape())
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient for leaf {name!r} is non-finite")
        grads[name] = g
    return GradientBundle(loss_value, grads, traj, peak_nodes)


def gradient(state0: RigidState, schedule, grid: TerrainGrid,
             robot: RobotModel, loss: TrackingLoss, dt: float = 0.01,
             horizon: float = 5.0, physics: PhysicsConfig = PhysicsConfig(),
             leaves=("heights", "controls"), checkpoint_every: int = 50,
             node_budget: int = DEFAULT_NODE_BUDGET) -> GradientBundle:
    """record_rollout + backward in one call."""
    rec = record_rollout(state0, schedule, grid, robot, dt, horizon, physics,
                         leaves, checkpoint_every, node_budget)
    return backward(rec, loss)


# --- finite-difference verification -----------------------------------------

_FD_EPS = {"heights": 1e-5, "stiffness": 1e-2, "damping": 1e-3,
           "friction": 1e-6, "controls": 1e-5, "state0": 1e-6, "mass": 1e-4}


@dataclass(frozen=True)
class FDEntry:
    leaf: str
    coord: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass(frozen=True)
class FDReport:
    loss: float
    entries: list
    max_rel_err: float
    warnings: tuple = ()

    @property
    def n_checked(self) -> int:
        return len(self.entries)


def _rel_err(a: float, f: float) -> float:
    # normalized by max(1, |g|): absolute below 1, relative above
    return abs(a - f) / max(1.0, abs(a), abs(f))


def finite_difference_check(state0: RigidState, schedule, grid: TerrainGrid,
                            robot: RobotModel, loss: TrackingLoss,
                            dt: float = 0.01, horizon: float = 2.0,
                            physics: PhysicsConfig = PhysicsConfig(),
                            leaves=LEAF_NAMES, coords_per_leaf: int = 8,
                            eps=None, checkpoint_every: int = 50) -> FDReport:
    """Central-difference probe of the reverse-mode gradients.

    For array leaves the ``coords_per_leaf`` largest-magnitude gradient
    entries are probed (scalar-ish leaves are probed fully).  Per-leaf step
    sizes default to values scaled to each parameter's magnitude; pass a
    float ``eps`` to override all of them.
    """
    warnings = []
    if eps is not None:
        eps = float(eps)
        if eps < 1e-8:
            warnings.append(f"eps {eps:g} below roundoff floor (< 1e-8)")
        elif eps > 1e-3:
            warnings.append(f"eps {eps:g} above recommended range (> 1e-3)")
    rec = record_rollout(state0, schedule, grid, robot, dt, horizon, physics,
                         leaves, checkpoint_every)
    bundle = backward(rec, loss)
    S = rec.n_steps
    arrs = array_layers_for(rec.leaves)

    def run(grid_=grid, robot_=robot, u_=None, x0_=None, v0_=None,
            R0_=None, w0_=None):
        out = rollout_arrays(
            (state0.x if x0_ is None else x0_)[None],
            (state0.v if v0_ is None else v0_)[None],
            (state0.R if R0_ is None else R0_)[None],
            (state0.omega if w0_ is None else w0_)[None],
            rec.u if u_ is None else u_, rec.flips, grid_, robot_,
            rec.dt, S, physics, np.float64, array_layers=arrs)
        if not out["ok"][0]:
            raise NonFiniteError("perturbed rollout diverged")
        return loss.evaluate(out["xs"][0], out["Rs"][0])

    layer_src = {"heights": "h_geom", "stiffness": "stiffness",
                 "damping": "damping", "friction": "friction"}

    def probe(leaf, flat_idx, e):
        vals = []
        for sgn in (+1.0, -1.0):
            d = sgn * e
            if leaf in layer_src:
                base = rec.grid.layer(layer_src[leaf]).copy()
                base.flat[flat_idx] += d
                vals.append(run(grid_=rec.grid.with_layers(
                    **{layer_src[leaf]: base})))
            elif leaf == "controls":
                u2 = rec.u.copy()
                u2.flat[flat_idx] += d
                vals.append(run(u_=u2))
            elif leaf == "mass":
                vals.append(run(robot_=scaled_robot(
                    rec.robot, rec.robot.total_mass + d)))
            else:  # state0
                p = np.concatenate([state0.x, state0.v, np.zeros(3),
                                    state0.omega])
                p[flat_idx] += d
                vals.append(run(x0_=p[0:3], v0_=p[3:6],
                                R0_=rotation_tangent_apply(state0.R, p[6:9]),
                                w0_=p[9:12]))
        return (vals[0] - vals[1]) / (2.0 * e)

    entries = []
    for leaf in rec.leaves:
        g = np.asarray(bundle.grads[leaf])
        e = _FD_EPS[leaf] if eps is None else float(eps)
        if g.ndim == 0:
            coords = [0]
        elif leaf == "state0":
            coords = list(range(12))
        else:
            order = np.argsort(-np.abs(g).ravel())
            coords = [int(i) for i in order[:coords_per_leaf]
                      if g.flat[i] != 0.0]
        for flat_idx in coords:
            an = float(g.flat[flat_idx]) if g.ndim else float(g)
            num = probe(leaf, flat_idx, e)
            coord = np.unravel_index(flat_idx, g.shape) if g.ndim else ()
            entries.append(FDEntry(leaf, tuple(int(c) for c in coord),
                                   an, num, _rel_err(an, num)))
    max_err = max((en.rel_err for en in entries), default=0.0)
    return FDReport(bundle.loss, entries, max_err, tuple(warnings))
