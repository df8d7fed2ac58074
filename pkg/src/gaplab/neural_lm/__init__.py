"""From-scratch word-level LSTM language model."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradientCheckError, gradient_check, make_sample
from .kernels import BACKEND, compiled_available
from .model import (
    DivergenceError,
    LmConfig,
    LmParameters,
    LmState,
    ModelError,
    PRESETS,
    forward_step,
    init_params,
    preset,
)
from .score import (
    ScoreError,
    SurprisalProfile,
    evaluate_perplexity,
    sequence_surprisal,
    stream_logprobs,
    stream_nll,
)
from .train import EpochRecord, TrainingLog, train, train_step

__all__ = [
    "BACKEND",
    "CheckpointError",
    "DivergenceError",
    "EpochRecord",
    "GradientCheckError",
    "LmConfig",
    "LmParameters",
    "LmState",
    "ModelError",
    "PRESETS",
    "ScoreError",
    "SurprisalProfile",
    "TrainingLog",
    "compiled_available",
    "evaluate_perplexity",
    "forward_step",
    "gradient_check",
    "init_params",
    "load_checkpoint",
    "make_sample",
    "preset",
    "save_checkpoint",
    "sequence_surprisal",
    "stream_logprobs",
    "stream_nll",
    "train",
    "train_step",
]
