"""Downscaling of coarse microwave brightness temperature with soft clustering and kernel ridge regression.

Modules
-------
grid        fine/coarse rasters, aggregation, observation noise, text I/O
scene       synthetic crop seasons and the tau-omega emission model
clustering  entropy-regularised Cauchy-Schwarz soft clustering
regression  dual kernel ridge regression and membership-weighted fusion
pipeline    per-day feature assembly, model selection and season runs
evaluation  error statistics, KL divergence, threshold test, reports
config, cli TOML run configuration and the ``srrm`` command
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateClusterError,
    DomainError,
    EmptyTrainingError,
    IllConditionedError,
    NumericalError,
    OptimizerDivergenceError,
    ParseError,
    SelectionError,
    ShapeError,
    SRRMError,
    StageError,
)
from .grid import CoarseGrid, FineGrid, NoiseSpec, add_observation_noise, aggregate, read_grid, write_grid
from .scene import SceneConfig, TauOmegaParams, generate_scene, tau_omega_forward
from .clustering import ClusterConfig, FeatureMatrix, cluster, cs_cost, cs_gradient
from .regression import KernelModel, TrainingSet, fit, fit_ensemble, fuse
from .pipeline import DownscaleResult, PipelineConfig, downscale_day, run_season
from .evaluation import EvalReport, evaluate_season, kld, rmse_sd, threshold_test
