from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .evaluate import evaluate, evaluate_detector, evaluate_model, model_detector
from .infer import infer
from .model import ProposeRectifyNet, build_model
from .sweep import robustness_sweep
from .train import lr_at, train

__all__ = [
    "Checkpoint", "ProposeRectifyNet", "RunConfig", "build_model", "evaluate", "evaluate_detector",
    "evaluate_model", "infer", "load_checkpoint", "lr_at", "model_detector", "robustness_sweep",
    "save_checkpoint", "train",
]
