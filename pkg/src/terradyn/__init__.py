"""Differentiable physics for tracked robots on heightmap terrain.

Core surface: terrain grids (:mod:`terradyn.terrain`), the rigid-body rollout
(:mod:`terradyn.dynamics`), reverse-mode gradients (:mod:`terradyn.diffsim`),
batched rollouts (:mod:`terradyn.batch`), losses (:mod:`terradyn.losses`),
terrain identification (:mod:`terradyn.identify`), trajectory shooting
(:mod:`terradyn.shooting`), and lift-splat geometry
(:mod:`terradyn.liftsplat`).
"""

from .batch import BatchRequest, BatchResult, benchmark, rollout_batch
from .diffsim import (GradientBundle, StateLinearLoss, TrackingLoss, backward,
                      finite_difference_check, gradient, record_rollout)
from .dynamics import (ControlStep, PhysicsConfig, RigidState, Trajectory,
                       rollout)
from .errors import (AllMaskedError, ConfigError, DegenerateTangentError,
                     DivergedError, EmptyOverlapError, NonFiniteError,
                     NonPositiveDepthError, OutOfBoundsError,
                     TapeOverflowError, TerradynError)
from .identify import IdentifyConfig, IdentifyResult, identify
from .liftsplat import (CameraIntrinsics, LiftedFeatureCloud, lift_pixel,
                        pointcloud_to_heightmap, splat)
from .losses import (masked_grid_loss, rotation_error, trajectory_loss,
                     translation_error)
from .robot import (FlipperState, RobotModel, TrackedRobotConfig,
                    build_tracked_robot, load_robot, save_robot)
from .shooting import (CandidateSet, ShootingConfig, navigate, sample_controls,
                       select_control, trajectory_cost, waypoint_cost)
from .terrain import (GridSpec, TerrainGrid, clamp_heights, load_grid,
                      make_grid, sample_at, save_grid, surface_sample)
from .worlds import generate_world

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
