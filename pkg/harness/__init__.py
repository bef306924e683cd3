# Harness module
from .config import (
    DEFAULT_AXIS_VALUES,
    AblationAxis,
    DatasetParams,
    ExperimentConfig,
    load_experiment_config,
)
from .pipeline import (
    AttackRun,
    append_reports,
    load_or_generate_corpus,
    run_ablation,
    run_attack,
    run_eval,
    run_probe,
    stage,
)
from .report import render_summary

__all__ = [
    "DEFAULT_AXIS_VALUES", "AblationAxis", "DatasetParams", "ExperimentConfig",
    "load_experiment_config", "AttackRun", "append_reports", "load_or_generate_corpus",
    "run_ablation", "run_attack", "run_eval", "run_probe", "stage", "render_summary",
]
