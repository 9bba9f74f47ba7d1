"""Everything around the math: data synthesis, training, evaluation, CLI."""

from .config import ConfigError, RunConfig, desk_config, load_config, save_config
from .errors import DataError, NumericalError
from .synth import Corpus, SyntheticSample, corrupt_to_coarse, generate_corpus, load_corpus, save_corpus
from .checkpoint import load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC
from .trainer import TrainResult, train
from .evaluator import RunReport, evaluate
from .report import emit_report

__all__ = [
    "RunConfig",
    "ConfigError",
    "desk_config",
    "load_config",
    "save_config",
    "DataError",
    "NumericalError",
    "SyntheticSample",
    "Corpus",
    "generate_corpus",
    "corrupt_to_coarse",
    "save_corpus",
    "load_corpus",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "train",
    "TrainResult",
    "evaluate",
    "RunReport",
    "emit_report",
]
