from .config import ExperimentConfig, load_config, parse_config
from .datasets import LabeledDataset, load_builtin_digits, load_idx_dataset, make_synthetic_dataset
from .checkpoints import Checkpoint, load_checkpoint, save_checkpoint
from .imaging import write_image_grid
from .experiment import StageError, run_experiment

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "LabeledDataset",
    "load_builtin_digits",
    "load_idx_dataset",
    "make_synthetic_dataset",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "write_image_grid",
    "StageError",
    "run_experiment",
]
