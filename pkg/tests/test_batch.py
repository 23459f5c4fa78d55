import numpy as np
import pytest

from terradyn import (
    BatchRequest,
    ControlStep,
    RigidState,
    benchmark,
    rollout,
    rollout_batch,
)
from terradyn.errors import ConfigError

from conftest import START_YAW

SCHEDULE = [ControlStep(0.8, 0.4, 5.0)]


def states(n):
    rng = np.random.default_rng(9)
    return [RigidState.rest((1.0137 + 0.3 * rng.random(),
                             2.1712 + 0.3 * rng.random(), 0.1041),
                            yaw=START_YAW + 0.1 * rng.random())
            for _ in range(n)]


def test_batch_of_one_bit_identical(bump_grid, robot):
    st = states(1)
    req = BatchRequest(bump_grid, robot, st, SCHEDULE, 0.01, 1.0,
                       precision="f64")
    res = rollout_batch(req)
    solo = rollout(st[0], SCHEDULE, bump_grid, robot, 0.01, 1.0)
    np.testing.assert_array_equal(res.trajectories[0].xs, solo.xs)
    np.testing.assert_array_equal(res.trajectories[0].Rs, solo.Rs)


def test_worker_count_invariance(bump_grid, robot):
    st = states(8)
    outs = []
    for workers in (1, 2, 4):
        req = BatchRequest(bump_grid, robot, st, SCHEDULE, 0.01, 0.5,
                           precision="f32", workers=workers)
        outs.append(rollout_batch(req))
    for res in outs[1:]:
        for a, b in zip(outs[0].trajectories, res.trajectories):
            np.testing.assert_array_equal(a.xs, b.xs)
            np.testing.assert_array_equal(a.vs, b.vs)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverging_lane_is_isolated(robot):
    from terradyn import GridSpec, make_grid

    # near-max stiffness under one lane overflows the contact force to inf
    spec = GridSpec((0.0, 0.0), 0.1, 64, 64)
    grid = make_grid(spec, stiffness=np.full((64, 64), 1e307))
    # healthy lanes fly ballistic above the terrain; lane 2 penetrates deeply
    st = [RigidState.rest((2.0 + k, 2.0, 5.0)) for k in range(4)]
    st[2] = RigidState.rest((3.0, 3.0, -0.9))
    req = BatchRequest(grid, robot, st, SCHEDULE, 0.01, 0.5,
                       precision="f64")
    res = rollout_batch(req)
    assert res.trajectories[2] is None
    assert res.n_ok == 3
    for i in (0, 1, 3):
        solo = rollout(st[i], SCHEDULE, grid, robot, 0.01, 0.5)
        np.testing.assert_array_equal(res.trajectories[i].xs, solo.xs)


def test_f32_close_to_f64(bump_grid, robot):
    st = states(2)
    r32 = rollout_batch(BatchRequest(bump_grid, robot, st, SCHEDULE, 0.01,
                                     0.5, precision="f32"))
    r64 = rollout_batch(BatchRequest(bump_grid, robot, st, SCHEDULE, 0.01,
                                     0.5, precision="f64"))
    for a, b in zip(r32.trajectories, r64.trajectories):
        assert np.max(np.abs(a.xs - b.xs)) <= 1e-3


def test_per_lane_schedules(bump_grid, robot):
    st = states(3)
    scheds = [[ControlStep(0.2 * (k + 1), 0.1, 0.5)] for k in range(3)]
    req = BatchRequest(bump_grid, robot, st, scheds, 0.01, 0.5,
                       precision="f64")
    res = rollout_batch(req)
    for k in range(3):
        solo = rollout(st[k], scheds[k], bump_grid, robot, 0.01, 0.5)
        np.testing.assert_array_equal(res.trajectories[k].xs, solo.xs)


def test_benchmark_validation():
    with pytest.raises(ConfigError):
        benchmark(horizons=(0.0,), batch_sizes=(2,), repetitions=1)
    with pytest.raises(ConfigError):
        benchmark(horizons=(), batch_sizes=(2,), repetitions=1)


def test_benchmark_small_report():
    rep = benchmark(horizons=(0.2, 0.4), batch_sizes=(2,), repetitions=1,
                    grid_size=32)
    assert len(rep.entries) == 2
    for e in rep.entries:
        assert e.median_time > 0
        assert e.throughput > 0
    assert "entries" in rep.to_json()
