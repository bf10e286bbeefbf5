"""Rubric-graph action quality scoring with stochastic step embeddings,
an annealed information-bottleneck objective, and calibrated uncertainty."""

__version__ = "0.1.0"

from .config import RunConfig, load_run_config
from .data import GeneratorConfig, generate_dataset
from .engine import evaluate, export_calibration, predict, train
from .model import forward, init_params
from .rubric import RubricSpec, build_dag, load_rubric_spec

__all__ = [
    "GeneratorConfig", "RunConfig", "RubricSpec", "build_dag", "evaluate",
    "export_calibration", "forward", "generate_dataset", "init_params",
    "load_run_config", "load_rubric_spec", "predict", "train", "__version__",
]
