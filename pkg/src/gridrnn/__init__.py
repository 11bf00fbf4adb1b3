"""Leaky recurrent networks trained for path integration.

Submodules: trajectory (arena simulation), placecells (position code),
network (leaky RNN), trainer (BPTT + Adam), noise (speed corruption),
analysis (rate maps / SAC / grid score / MSE), topology (persistence,
torus projections), experiment (sweeps + artifacts), cli.
"""

from .errors import ConfigError, NumericError
from .trajectory import ArenaConfig, MotionConfig, Trajectory, generate_trajectory
from .placecells import PlaceCellEnsemble, encode, decode
from .network import LeakyRnnParams, RnnState, init_params, step, readout, forward
from .noise import NoiseConfig, corrupt_speeds, rebuild_velocity
from .trainer import TrainConfig, TrainReport, loss, gradients, train, seed_matched_comparison
from .analysis import (
    RateMap,
    Sac,
    GridScoreResult,
    TrajectoryError,
    rate_map,
    sac,
    grid_score,
    population_grid_stats,
    trajectory_mse,
)
from .topology import (
    PointCloud,
    PersistenceDiagram,
    TorusProjection,
    NoHexStructure,
    build_point_cloud,
    pca_reduce,
    rips_persistence,
    shuffled_control,
    barcode_stats,
    fourier_torus,
)

__version__ = "0.1.0"
