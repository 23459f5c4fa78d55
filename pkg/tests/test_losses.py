import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from terradyn.dynamics import Trajectory
from terradyn.errors import AllMaskedError, EmptyOverlapError
from terradyn.losses import (
    masked_grid_loss,
    rotation_error,
    trajectory_loss,
    translation_error,
)


def make_traj(xs, Rs=None, times=None):
    xs = np.asarray(xs, dtype=np.float64)
    n = len(xs)
    if Rs is None:
        Rs = np.tile(np.eye(3), (n, 1, 1))
    if times is None:
        times = np.arange(n, dtype=np.float64) * 0.1
    z3 = np.zeros((n, 3))
    return Trajectory(times, xs, z3, np.asarray(Rs), z3,
                      np.zeros((max(n - 1, 1), 3)))


def yaw_rot(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def test_trajectory_loss_self_zero():
    t = make_traj(np.random.default_rng(0).normal(size=(8, 3)))
    assert trajectory_loss(t, t) == 0.0


def test_trajectory_loss_constant_offset():
    xs = np.random.default_rng(1).normal(size=(8, 3))
    a, b = make_traj(xs), make_traj(xs + [1.0, 0.0, 0.0])
    assert trajectory_loss(a, b) == pytest.approx(1.0, abs=1e-12)


def test_trajectory_loss_hand_summed_oracle():
    rng = np.random.default_rng(2)
    xa, xb = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    got = trajectory_loss(make_traj(xa), make_traj(xb))
    oracle = sum(np.dot(xa[i] - xb[i], xa[i] - xb[i]) for i in range(10)) / 10
    assert got == pytest.approx(oracle, abs=1e-12)


def test_trajectory_loss_resamples_reference():
    xs = np.tile([[0.0, 0.0, 0.0]], (11, 1))
    a = make_traj(xs, times=np.linspace(0.0, 1.0, 11))
    b = make_traj(np.tile([[1.0, 0.0, 0.0]], (6, 1)),
                  times=np.linspace(0.0, 1.0, 6))
    assert trajectory_loss(a, b) == pytest.approx(1.0, abs=1e-12)


def test_trajectory_loss_empty_overlap():
    a = make_traj(np.zeros((4, 3)), times=np.array([0.0, 0.1, 0.2, 0.3]))
    b = make_traj(np.zeros((4, 3)), times=np.array([9.0, 9.1, 9.2, 9.3]))
    with pytest.raises(EmptyOverlapError):
        trajectory_loss(a, b)


def test_masked_grid_loss_examples():
    t = np.zeros((4, 4))
    assert masked_grid_loss(t, t, np.ones_like(t)) == 0.0
    pred = np.zeros((4, 4))
    pred[1, 2] = 0.5
    w = np.zeros((4, 4))
    w[1, 2] = 1.0
    assert masked_grid_loss(pred, t, w) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(AllMaskedError):
        masked_grid_loss(pred, t, np.zeros((4, 4)))


def test_masked_grid_loss_brute_force_oracle():
    rng = np.random.default_rng(3)
    p, t = rng.normal(size=(32, 32)), rng.normal(size=(32, 32))
    w = rng.uniform(0.0, 1.0, (32, 32)) * (rng.random((32, 32)) > 0.3)
    oracle = 0.0
    for i in range(32):
        for j in range(32):
            oracle += (w[i, j] * (p[i, j] - t[i, j])) ** 2
    oracle /= np.count_nonzero(w > 0)
    assert masked_grid_loss(p, t, w) == pytest.approx(oracle, rel=1e-12)


@given(hnp.arrays(np.float64, (6, 6), elements=st.floats(-1, 1)))
@settings(max_examples=25, deadline=None)
def test_masked_loss_permutation_invariance(pred):
    target = np.roll(pred, 1, axis=0)
    w = np.abs(pred) + 0.1
    perm = np.random.default_rng(0).permutation(36)
    base = masked_grid_loss(pred, target, w)
    shuffled = masked_grid_loss(pred.ravel()[perm].reshape(6, 6),
                                target.ravel()[perm].reshape(6, 6),
                                w.ravel()[perm].reshape(6, 6))
    assert shuffled == pytest.approx(base, rel=1e-9)


def test_translation_error_examples():
    xs = np.random.default_rng(4).normal(size=(9, 3))
    a = make_traj(xs)
    assert translation_error(a, a) == 0.0
    b = make_traj(xs + [0.0, 1.0, 0.0])
    # printed formula: sqrt of the mean of (unsquared) norms
    assert translation_error(a, b) == pytest.approx(1.0, abs=1e-12)
    assert translation_error(a, b, rmse=True) == pytest.approx(1.0, abs=1e-12)
    c = make_traj(xs + [0.0, 4.0, 0.0])
    assert translation_error(a, c) == pytest.approx(2.0, abs=1e-12)


def test_rotation_error_examples():
    xs = np.zeros((5, 3))
    a = make_traj(xs)
    assert rotation_error(a, a) == 0.0
    b = make_traj(xs, Rs=np.tile(yaw_rot(np.pi / 2), (5, 1, 1)))
    assert rotation_error(a, b) == pytest.approx(np.pi / 2, abs=1e-9)


def test_rotation_error_frame_invariance():
    rng = np.random.default_rng(5)
    xs = np.zeros((5, 3))
    Ra = np.stack([yaw_rot(a) for a in rng.uniform(-1, 1, 5)])
    Rb = np.stack([yaw_rot(a) for a in rng.uniform(-1, 1, 5)])
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    base = rotation_error(make_traj(xs, Ra), make_traj(xs, Rb))
    rot = rotation_error(make_traj(xs, q @ Ra), make_traj(xs, q @ Rb))
    assert rot == pytest.approx(base, abs=1e-9)
