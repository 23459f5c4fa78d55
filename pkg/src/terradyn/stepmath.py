"""Single-step contact dynamics, written once against an ops facade.

The same formula sequence runs under three backends:

* ``NUMPY_OPS`` with float64 arrays  — the reference rollout,
* ``NUMPY_OPS`` with float32 arrays  — the batched throughput path,
* ``TapeOps``                        — the recorded, differentiable path.

Vectors are kept as component arrays.  State components have shape (B, 1),
per-point quantities (B, N) (or (N,) when shared across the batch); numpy
broadcasting, which the tape mirrors, ties them together.  Because every
backend executes the identical op sequence, recorded forward values bit-match
the plain rollout.

Force model per point: N = relu(e*dh - d*(pdot.n)) * sigmoid(k*(h - p_z)) * n
with dh = (h - p_z) * n_z, and friction F_f = mu*|N|*((u*a - pdot).tau)*tau
where a is the robot forward axis in world frame and tau its unit projection
onto the tangent plane.
"""

from __future__ import annotations

import numpy as np


class NumpyOps:
    """Raw ndarray backend."""

    @staticmethod
    def value(x):
        return x.value if hasattr(x, "value") else np.asarray(x)

    @staticmethod
    def sqrt(x):
        return np.sqrt(x)

    @staticmethod
    def sigmoid(x):
        z = np.exp(-np.abs(x))
        return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    @staticmethod
    def relu(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def clip01(x):
        return np.clip(x, 0.0, 1.0)

    @staticmethod
    def take(flat, idx):
        return np.take(flat, idx)

    @staticmethod
    def sum_points(x):
        return np.sum(x, axis=-1, keepdims=True)


NUMPY_OPS = NumpyOps()


def bilinear_weights(ops, terr, pwx, pwy):
    """Corner indices (constants) and interpolation weights (differentiable)."""
    gx = (pwx - terr["ox"]) * terr["inv_res"]
    gy = (pwy - terr["oy"]) * terr["inv_res"]
    gxv = ops.value(gx)
    gyv = ops.value(gy)
    cols, rows = terr["cols"], terr["rows"]
    # fmin/fmax also map NaN lanes to a valid border index without touching
    # the (still NaN) differentiable weights
    ix0 = np.fmax(np.fmin(np.floor(gxv), cols - 2), 0).astype(np.intp)
    iy0 = np.fmax(np.fmin(np.floor(gyv), rows - 2), 0).astype(np.intp)
    tx = ops.clip01(gx - ix0.astype(gxv.dtype))
    ty = ops.clip01(gy - iy0.astype(gyv.dtype))
    base = iy0 * cols + ix0
    idx = (base, base + 1, base + cols, base + cols + 1)
    w00 = (1.0 - tx) * (1.0 - ty)
    w01 = tx * (1.0 - ty)
    w10 = (1.0 - tx) * ty
    w11 = tx * ty
    return idx, (w00, w01, w10, w11)


def sample_layers(ops, layers, idx, w):
    i00, i01, i10, i11 = idx
    w00, w01, w10, w11 = w
    out = []
    for flat in layers:
        if np.ndim(ops.value(flat)) == 0:
            # constant layer (stored as a scalar): interpolation is a no-op
            out.append(flat)
            continue
        out.append(w00 * ops.take(flat, i00) + w01 * ops.take(flat, i01)
                   + w10 * ops.take(flat, i10) + w11 * ops.take(flat, i11))
    return out


def contact_forces(ops, st, pts, ctrl, terr, rob, cfg):
    """Per-point normal and friction forces plus the world point positions.

    Returns a dict with per-point force components and intermediates reused by
    the step integrator.
    """
    x, y, z = st["x"], st["y"], st["z"]
    vx, vy, vz = st["vx"], st["vy"], st["vz"]
    r00, r01, r02 = st["r00"], st["r01"], st["r02"]
    r10, r11, r12 = st["r10"], st["r11"], st["r12"]
    r20, r21, r22 = st["r20"], st["r21"], st["r22"]
    wx, wy, wz = st["wx"], st["wy"], st["wz"]
    px, py, pz = pts["px"], pts["py"], pts["pz"]

    # body points rotated to world
    rpx = r00 * px + r01 * py + r02 * pz
    rpy = r10 * px + r11 * py + r12 * pz
    rpz = r20 * px + r21 * py + r22 * pz
    pwx = x + rpx
    pwy = y + rpy
    pwz = z + rpz

    # world angular velocity and point velocities  pdot = v + w_w x (R p)
    wwx = r00 * wx + r01 * wy + r02 * wz
    wwy = r10 * wx + r11 * wy + r12 * wz
    wwz = r20 * wx + r21 * wy + r22 * wz
    pdx = vx + (wwy * rpz - wwz * rpy)
    pdy = vy + (wwz * rpx - wwx * rpz)
    pdz = vz + (wwx * rpy - wwy * rpx)

    idx, w = bilinear_weights(ops, terr, pwx, pwy)
    h, sx, sy, e, d, mu = sample_layers(
        ops, (terr["h"], terr["sx"], terr["sy"],
              terr["stiffness"], terr["damping"], terr["friction"]), idx, w)

    # surface normal from interpolated slopes
    ninv = 1.0 / ops.sqrt(sx * sx + sy * sy + 1.0)
    nx = -sx * ninv
    ny = -sy * ninv
    nz = ninv

    dz = h - pwz
    gate = ops.sigmoid(cfg["k_gate"] * dz)
    dh = dz * nz
    vn = pdx * nx + pdy * ny + pdz * nz
    nmag = ops.relu(e * dh - d * vn) * gate
    fnx = nmag * nx
    fny = nmag * ny
    fnz = nmag * nz

    # friction along the tangent projection of the forward axis (R column 0)
    ax, ay, az = r00, r10, r20
    adn = ax * nx + ay * ny + az * nz
    tx_ = ax - adn * nx
    ty_ = ay - adn * ny
    tz_ = az - adn * nz
    tinv = 1.0 / ops.sqrt(tx_ * tx_ + ty_ * ty_ + tz_ * tz_ + cfg["tangent_eps"] ** 2)
    taux = tx_ * tinv
    tauy = ty_ * tinv
    tauz = tz_ * tinv

    u_pt = ctrl["u_left"] * rob["left_mask"] + ctrl["u_right"] * rob["right_mask"]
    slip = ((u_pt * ax - pdx) * taux + (u_pt * ay - pdy) * tauy
            + (u_pt * az - pdz) * tauz)
    fmag = mu * nmag * slip * rob["track_mask"]
    ffx = fmag * taux
    ffy = fmag * tauy
    ffz = fmag * tauz

    if cfg["lateral_friction"]:
        # same law along the lateral tangent n x tau; tracks command no
        # lateral speed, so the slip term is -pdot . lat
        lx = ny * tauz - nz * tauy
        ly = nz * taux - nx * tauz
        lz = nx * tauy - ny * taux
        lmag = mu * nmag * (-(pdx * lx + pdy * ly + pdz * lz)) * rob["track_mask"]
        ffx = ffx + lmag * lx
        ffy = ffy + lmag * ly
        ffz = ffz + lmag * lz

    return {
        "rpx": rpx, "rpy": rpy, "rpz": rpz,
        "pwx": pwx, "pwy": pwy, "pwz": pwz,
        "wwx": wwx, "wwy": wwy, "wwz": wwz,
        "fnx": fnx, "fny": fny, "fnz": fnz,
        "ffx": ffx, "ffy": ffy, "ffz": ffz,
        "gate": gate, "nmag": nmag,
    }


def state_rates(ops, st, pts, forces, rob, cfg):
    """Rigid-body accelerations from per-point forces (plus gravity)."""
    px, py, pz = pts["px"], pts["py"], pts["pz"]
    r00, r01, r02 = st["r00"], st["r01"], st["r02"]
    r10, r11, r12 = st["r10"], st["r11"], st["r12"]
    r20, r21, r22 = st["r20"], st["r21"], st["r22"]

    m = rob["m"]
    mi_g = m * rob["w_frac"] * (-cfg["gravity"])  # z-component of per-point gravity
    fx = forces["fnx"] + forces["ffx"]
    fy = forces["fny"] + forces["ffy"]
    fz = forces["fnz"] + forces["ffz"] + mi_g

    sfx = ops.sum_points(fx)
    sfy = ops.sum_points(fy)
    sfz = ops.sum_points(fz)
    vdx = sfx / m
    vdy = sfy / m
    vdz = sfz / m

    # torque in the body frame: sum p_i x (R^T F_i)
    fbx = r00 * fx + r10 * fy + r20 * fz
    fby = r01 * fx + r11 * fy + r21 * fz
    fbz = r02 * fx + r12 * fy + r22 * fz
    tqx = ops.sum_points(py * fbz - pz * fby)
    tqy = ops.sum_points(pz * fbx - px * fbz)
    tqz = ops.sum_points(px * fby - py * fbx)

    if cfg["gyroscopic"]:
        ju = cfg["j_unit"]  # J / m, constant
        wx, wy, wz = st["wx"], st["wy"], st["wz"]
        jwx = m * (ju[0][0] * wx + ju[0][1] * wy + ju[0][2] * wz)
        jwy = m * (ju[1][0] * wx + ju[1][1] * wy + ju[1][2] * wz)
        jwz = m * (ju[2][0] * wx + ju[2][1] * wy + ju[2][2] * wz)
        tqx = tqx - (wy * jwz - wz * jwy)
        tqy = tqy - (wz * jwx - wx * jwz)
        tqz = tqz - (wx * jwy - wy * jwx)

    jinv = cfg["jinv_unit"]  # (J / m)^-1, constant
    wdx = (jinv[0][0] * tqx + jinv[0][1] * tqy + jinv[0][2] * tqz) / m
    wdy = (jinv[1][0] * tqx + jinv[1][1] * tqy + jinv[1][2] * tqz) / m
    wdz = (jinv[2][0] * tqx + jinv[2][1] * tqy + jinv[2][2] * tqz) / m
    return vdx, vdy, vdz, wdx, wdy, wdz


def euler_advance(ops, st, rates, forces, dt):
    """Explicit Euler update of all state fields, then column Gram-Schmidt."""
    vdx, vdy, vdz, wdx, wdy, wdz = rates
    wwx, wwy, wwz = forces["wwx"], forces["wwy"], forces["wwz"]
    new = {
        "x": st["x"] + dt * st["vx"],
        "y": st["y"] + dt * st["vy"],
        "z": st["z"] + dt * st["vz"],
        "vx": st["vx"] + dt * vdx,
        "vy": st["vy"] + dt * vdy,
        "vz": st["vz"] + dt * vdz,
        "wx": st["wx"] + dt * wdx,
        "wy": st["wy"] + dt * wdy,
        "wz": st["wz"] + dt * wdz,
    }
    # Rdot = [w_world]x R, applied column-wise
    r = {k: st[k] for k in ("r00", "r01", "r02", "r10", "r11", "r12",
                            "r20", "r21", "r22")}
    cand = {}
    for a, b, c in (("r00", "r10", "r20"),
                    ("r01", "r11", "r21"),
                    ("r02", "r12", "r22")):
        cand[a] = r[a] + dt * (-wwz * r[b] + wwy * r[c])
        cand[b] = r[b] + dt * (wwz * r[a] - wwx * r[c])
        cand[c] = r[c] + dt * (-wwy * r[a] + wwx * r[b])

    # re-orthonormalize: normalize col0, orthogonalize col1, col2 = col0 x col1
    n0 = 1.0 / ops.sqrt(cand["r00"] * cand["r00"] + cand["r10"] * cand["r10"]
                        + cand["r20"] * cand["r20"])
    c00, c10, c20 = cand["r00"] * n0, cand["r10"] * n0, cand["r20"] * n0
    d01 = c00 * cand["r01"] + c10 * cand["r11"] + c20 * cand["r21"]
    o01 = cand["r01"] - d01 * c00
    o11 = cand["r11"] - d01 * c10
    o21 = cand["r21"] - d01 * c20
    n1 = 1.0 / ops.sqrt(o01 * o01 + o11 * o11 + o21 * o21)
    c01, c11, c21 = o01 * n1, o11 * n1, o21 * n1
    new["r00"], new["r01"] = c00, c01
    new["r10"], new["r11"] = c10, c11
    new["r20"], new["r21"] = c20, c21
    new["r02"] = c10 * c21 - c20 * c11
    new["r12"] = c20 * c01 - c00 * c21
    new["r22"] = c00 * c11 - c10 * c01
    return new


def dynamics_step(ops, st, pts, ctrl, terr, rob, cfg, dt):
    """One explicit-Euler step.  Returns (new_state, force diagnostics)."""
    forces = contact_forces(ops, st, pts, ctrl, terr, rob, cfg)
    rates = state_rates(ops, st, pts, forces, rob, cfg)
    return euler_advance(ops, st, rates, forces, dt), forces
