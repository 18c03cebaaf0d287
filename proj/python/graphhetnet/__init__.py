"""Few-shot motion forecasting on heterogeneous sensor graphs."""

from ._core import (
    CheckpointError,
    ConfigError,
    DataError,
    Graph,
    GraphError,
    Model,
    ShapeError,
    cap_ablation,
    default_config,
    evaluate,
    forecast_errors,
    horizon_frame,
    sample_stats,
    sample_subgraph,
    train,
    zero_velocity,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "Graph",
    "GraphError",
    "Model",
    "ShapeError",
    "cap_ablation",
    "default_config",
    "evaluate",
    "forecast_errors",
    "horizon_frame",
    "sample_stats",
    "sample_subgraph",
    "train",
    "zero_velocity",
]
