import numpy as np
import pytest

from terradyn import (
    GridSpec,
    RigidState,
    build_tracked_robot,
    generate_world,
    make_grid,
)

# Start poses deliberately avoid coordinates commensurate with the 0.1 m grid
# resolution: on-lattice contact points sit exactly on bilinear cell
# boundaries where the surface has derivative kinks, and central finite
# differences straddle them.
START_X = (1.0137, 3.1712, 0.1041)
START_YAW = 0.0731


@pytest.fixture(scope="session")
def robot():
    return build_tracked_robot()


@pytest.fixture(scope="session")
def flat_grid():
    return generate_world("flat", GridSpec((0.0, 0.0), 0.1, 64, 64))


@pytest.fixture(scope="session")
def bump_grid():
    return generate_world("bump-field", GridSpec((0.0, 0.0), 0.1, 64, 64),
                          seed=7, height=0.15)


@pytest.fixture()
def start_state():
    return RigidState.rest(START_X, yaw=START_YAW)


@pytest.fixture(scope="session")
def settled_state(flat_grid, robot):
    """Rest state after the robot settles onto flat terrain (equilibrium)."""
    from terradyn import ControlStep, rollout

    st = RigidState.rest(START_X, yaw=START_YAW)
    traj = rollout(st, [ControlStep(0.0, 0.0, 6.0)], flat_grid, robot,
                   dt=0.01, horizon=6.0)
    final = traj.state(traj.n_steps)
    return RigidState(final.x, np.zeros(3), final.R, np.zeros(3))


def small_spec(rows=16, cols=16, resolution=0.1):
    return GridSpec((0.0, 0.0), resolution, rows, cols)


def grid_from_heights(h, resolution=0.1, **kw):
    h = np.asarray(h, dtype=np.float64)
    return make_grid(GridSpec((0.0, 0.0), resolution, *h.shape), h_geom=h, **kw)
