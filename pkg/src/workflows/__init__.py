"""
Workflows Layer - LangGraph による実験パイプライン

- experiment: load_data → train | load_checkpoint → evaluate → report
"""

from src.workflows.experiment import (
    ExperimentInput,
    ExperimentOutput,
    ExperimentState,
    ExperimentWorkflow,
    build_model_config,
)

__all__ = [
    "ExperimentInput",
    "ExperimentOutput",
    "ExperimentState",
    "ExperimentWorkflow",
    "build_model_config",
]
