import numpy as np
import pytest

from terradyn import ControlStep, RigidState, rollout
from terradyn.diffsim import (
    LEAF_NAMES,
    StateLinearLoss,
    TrackingLoss,
    backward,
    finite_difference_check,
    gradient,
    record_rollout,
)
from terradyn.errors import ConfigError

from conftest import START_X, START_YAW

SCHEDULE = [ControlStep(0.8, 0.6, 10.0)]


def test_recording_transparency(bump_grid, robot, start_state):
    rec = record_rollout(start_state, SCHEDULE, bump_grid, robot,
                         dt=0.01, horizon=1.0)
    plain = rollout(start_state, SCHEDULE, bump_grid, robot,
                    dt=0.01, horizon=1.0)
    np.testing.assert_array_equal(rec.trajectory.xs, plain.xs)
    np.testing.assert_array_equal(rec.trajectory.Rs, plain.Rs)
    np.testing.assert_array_equal(rec.trajectory.vs, plain.vs)


def test_unknown_leaf_rejected(bump_grid, robot, start_state):
    with pytest.raises(ConfigError):
        record_rollout(start_state, SCHEDULE, bump_grid, robot,
                       leaves=("bogus",))


def test_free_fall_state0_gradients(flat_grid, robot):
    # airborne: z_T = z0 + dt * sum(v_i), exactly linear in (z0, vz0)
    s0 = RigidState.rest((3.0, 3.0, 10.0))
    horizon, dt = 1.0, 0.01
    n = int(round(horizon / dt))
    loss = StateLinearLoss.final_coordinate(2, n + 1)
    g = gradient(s0, [ControlStep(0.0, 0.0, horizon)], flat_grid, robot,
                 loss, dt, horizon, leaves=("state0",))
    state0_grad = g.grads["state0"]
    assert state0_grad[2] == pytest.approx(1.0, abs=1e-12)   # d z_T / d z0
    assert state0_grad[5] == pytest.approx(horizon, abs=1e-12)  # d z_T / d vz0


def test_loss_at_minimum_gives_zero_gradients(bump_grid, robot, start_state):
    rec = record_rollout(start_state, SCHEDULE, bump_grid, robot,
                         dt=0.01, horizon=0.5,
                         leaves=("heights", "controls", "friction"))
    bundle = backward(rec, TrackingLoss(rec.trajectory.xs))
    assert bundle.loss == 0.0
    for leaf, arr in bundle.grads.items():
        np.testing.assert_array_equal(arr, np.zeros_like(arr), err_msg=leaf)


def test_gradient_linearity(bump_grid, robot, start_state):
    rec = record_rollout(start_state, SCHEDULE, bump_grid, robot,
                         dt=0.01, horizon=0.5, leaves=("heights", "controls"))
    n = rec.trajectory.n_steps + 1
    rng = np.random.default_rng(0)
    c1 = rng.normal(size=(n, 3))
    c2 = rng.normal(size=(n, 3))
    a, b = 1.7, -0.4
    g1 = backward(rec, StateLinearLoss(c1)).grads
    g2 = backward(rec, StateLinearLoss(c2)).grads
    g12 = backward(rec, StateLinearLoss(a * c1 + b * c2)).grads
    for leaf in g1:
        lhs = g12[leaf]
        rhs = a * g1[leaf] + b * g2[leaf]
        scale = max(1.0, np.max(np.abs(rhs)))
        assert np.max(np.abs(lhs - rhs)) / scale <= 1e-12


def test_untouched_cells_have_zero_gradient(bump_grid, robot, start_state):
    rec = record_rollout(start_state, SCHEDULE, bump_grid, robot,
                         dt=0.01, horizon=0.5, leaves=("heights",))
    ref = rec.trajectory.xs + np.array([0.01, -0.02, 0.01])
    gh = backward(rec, TrackingLoss(ref)).grads["heights"]
    # far corner of the 6.4 m grid is never near the robot footprint
    assert np.all(gh[40:, 40:] == 0.0)
    assert np.any(gh != 0.0)


def test_repeated_backward_bit_identical(bump_grid, robot, start_state):
    rec = record_rollout(start_state, SCHEDULE, bump_grid, robot,
                         dt=0.01, horizon=0.5, leaves=("heights", "controls"))
    ref = rec.trajectory.xs + np.array([0.01, -0.02, 0.01])
    g1 = backward(rec, TrackingLoss(ref)).grads
    g2 = backward(rec, TrackingLoss(ref)).grads
    for leaf in g1:
        np.testing.assert_array_equal(g1[leaf], g2[leaf])


def test_checkpoint_segmentation_exact(bump_grid, robot, start_state):
    ref = None
    grads = {}
    for every in (7, 50, 1000):
        rec = record_rollout(start_state, SCHEDULE, bump_grid, robot,
                             dt=0.01, horizon=0.5,
                             leaves=("heights", "controls", "state0"),
                             checkpoint_every=every)
        if ref is None:
            ref = rec.trajectory.xs + np.array([0.01, -0.02, 0.01])
        grads[every] = backward(rec, TrackingLoss(ref)).grads
    for leaf in grads[7]:
        np.testing.assert_allclose(grads[7][leaf], grads[1000][leaf],
                                   rtol=1e-12, atol=1e-18, err_msg=leaf)
        np.testing.assert_allclose(grads[50][leaf], grads[1000][leaf],
                                   rtol=1e-12, atol=1e-18, err_msg=leaf)


def test_tape_node_count_linear(bump_grid, robot, start_state):
    # memory-contract regression pin: replay-tape nodes stay below a fixed
    # constant per (step x contact point); a blowup here means the kernel
    # started allocating per-grid-cell work on the tape
    per = {}
    for horizon in (0.2, 0.4):
        rec = record_rollout(start_state, SCHEDULE, bump_grid, robot,
                             dt=0.01, horizon=horizon,
                             leaves=("heights", "controls"),
                             checkpoint_every=10 ** 9)
        bundle = backward(rec, TrackingLoss(rec.trajectory.xs))
        steps = rec.trajectory.n_steps
        per[horizon] = bundle.peak_tape_nodes / (steps * robot.n_points)
    assert per[0.2] <= 3.0
    assert per[0.4] <= 3.0
    # doubling the steps roughly doubles the nodes (linear growth)
    assert abs(per[0.4] / per[0.2] - 1.0) <= 0.1


def test_fd_quadratic_through_tape():
    # central differences are exact for quadratics up to roundoff
    from terradyn.tape import Tape

    c = np.array([0.3, -1.2, 2.0])

    def f(v):
        return float(np.sum((v - c) ** 2))

    x0 = np.array([1.0, 2.0, 3.0])
    tape = Tape()
    x = tape.leaf(x0)
    y = (x - c) * (x - c)
    tape.backward(y)
    eps = 1e-5
    for i in range(3):
        d = np.zeros(3)
        d[i] = eps
        fd = (f(x0 + d) - f(x0 - d)) / (2 * eps)
        rel = abs(fd - x.grad[i]) / max(1.0, abs(fd), abs(x.grad[i]))
        assert rel <= 1e-10


def test_fd_report_random_scenario(bump_grid, robot, start_state):
    rep = finite_difference_check(
        start_state, SCHEDULE, bump_grid, robot,
        TrackingLoss.final_position(np.array([3.0, 3.5, 0.1]), 51),
        dt=0.01, horizon=0.5, leaves=("heights", "controls", "mass"),
        coords_per_leaf=4)
    assert rep.max_rel_err <= 1e-4
    assert not rep.warnings


def test_fd_gate_boundary(flat_grid, robot, settled_state):
    # robot resting at the surface: contact gate sits at p_z ~ h
    rep = finite_difference_check(
        settled_state, [ControlStep(0.0, 0.0, 10.0)], flat_grid, robot,
        TrackingLoss.final_position(np.array([START_X[0], START_X[1], 0.0]), 31),
        dt=0.01, horizon=0.3, leaves=("heights",), coords_per_leaf=4)
    assert rep.max_rel_err <= 1e-3


def test_fd_eps_warnings(bump_grid, robot, start_state):
    rep = finite_difference_check(
        start_state, SCHEDULE, bump_grid, robot,
        TrackingLoss.final_position(np.array([3.0, 3.5, 0.1]), 21),
        dt=0.01, horizon=0.2, leaves=("mass",), eps=1e-12)
    assert any("1e-08" in w or "below" in w.lower() for w in rep.warnings)
