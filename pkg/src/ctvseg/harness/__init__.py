"""Training, inference, evaluation, ablations and the command line."""

from .ablation import KINDS as ABLATION_KINDS
from .ablation import run_ablation
from .config import ExperimentConfig, load_config, parse_config
from .data import Case, DataError, load_cases
from .evaluate import evaluate, model_predictor
from .model import SegModel
from .train import load_checkpoint, predict_logits, save_checkpoint, sliding_window_infer, train

__all__ = [
    "ABLATION_KINDS", "Case", "DataError", "ExperimentConfig", "SegModel", "evaluate", "load_checkpoint",
    "load_cases", "load_config", "model_predictor", "parse_config", "predict_logits", "run_ablation",
    "save_checkpoint", "sliding_window_infer", "train",
]
