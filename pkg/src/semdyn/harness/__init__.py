from .checkpoint import load_checkpoint, restore_dynamics, restore_inpainter, save_checkpoint
from .config import DataConfig, ExperimentConfig, LossWeights, TrainConfig, load_config
from .evaluation import EvalReport, evaluate
from .training import MissingCheckpointError, train_stage

__all__ = [
    "DataConfig",
    "EvalReport",
    "ExperimentConfig",
    "LossWeights",
    "MissingCheckpointError",
    "TrainConfig",
    "evaluate",
    "load_checkpoint",
    "load_config",
    "restore_dynamics",
    "restore_inpainter",
    "save_checkpoint",
    "train_stage",
]
