"""Self-organising eigenspace maps for time-series clustering and forecasting."""

from .datagen import LRFSpec, benchmark_specs, generate, generate_groups
from .embedding import EmbeddedCovariance, MultiSeries, TimeSeries, covariance, default_L, embed, stack_covariance
from .errors import NumericalError, SOEMError, ValidationError
from .evaluation import MetricReport, davies_bouldin, evaluate, topographic_accuracy, triangle_violation_rate
from .io import Dataset, load_dataset
from .linalg import delta, gram_schmidt, joint_diagonalize, off, sym_eigen
from .pipeline import PipelineConfig, partition_grid, run_pipeline
from .ssa import decompose, forecast, lrf, mssa_forecast
from .trainer import Assignment, EigenMap, TrainConfig, assign, load_map, save_map, train

__all__ = [
    "Assignment",
    "Dataset",
    "EigenMap",
    "EmbeddedCovariance",
    "LRFSpec",
    "MetricReport",
    "MultiSeries",
    "NumericalError",
    "PipelineConfig",
    "SOEMError",
    "TimeSeries",
    "TrainConfig",
    "ValidationError",
    "assign",
    "benchmark_specs",
    "covariance",
    "davies_bouldin",
    "decompose",
    "default_L",
    "delta",
    "embed",
    "evaluate",
    "forecast",
    "generate",
    "generate_groups",
    "gram_schmidt",
    "joint_diagonalize",
    "load_dataset",
    "load_map",
    "lrf",
    "mssa_forecast",
    "off",
    "partition_grid",
    "run_pipeline",
    "save_map",
    "stack_covariance",
    "sym_eigen",
    "topographic_accuracy",
    "train",
    "triangle_violation_rate",
]
