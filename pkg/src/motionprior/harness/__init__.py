"""Experiment configuration, A/B runs, reports and the command-line interface."""

from .config import DatasetSpec, EnsembleSpec, ExperimentConfig, ModelSpec, load_config, parse_config
from .experiments import (MetricsReport, SeedResult, TrackingSetup, blend_concat, build_switch_sequence,
                          emit_plot_data, improvement, run_ab_ensemble, run_ab_transitions, train_setup,
                          write_manifest)

__all__ = [
    "DatasetSpec", "EnsembleSpec", "ExperimentConfig", "MetricsReport", "ModelSpec", "SeedResult",
    "TrackingSetup", "blend_concat", "build_switch_sequence", "emit_plot_data", "improvement", "load_config",
    "parse_config", "run_ab_ensemble", "run_ab_transitions", "train_setup", "write_manifest",
]
