"""Continual few-shot relation classification with serial distillation.

The package trains a compact encoder over a sequence of relation-labeled
tasks, carrying knowledge forward through exemplar memory, prototype-based
pseudo samples, entity-swap augmentation, and distillation against the
previous task's frozen model.  Everything runs on numpy with a built-in
reverse-mode autodiff, so runs are deterministic and desk-scale.
"""

from .data import (Sample, Task, TaskSequence, generate_synthetic_sequence,
                   load_jsonl, write_jsonl)
from .encoder import EncoderConfig, Model, ModelSnapshot
from .evaluation import AccuracyMatrix, average_accuracy, bwt, strict_accuracy
from .losses import LossWeights
from .memory import MemoryStore, PseudoSample
from .trainer import RunConfig, TrainerState, run_experiment

__version__ = "0.1.0"

__all__ = [
    "Sample", "Task", "TaskSequence", "generate_synthetic_sequence",
    "load_jsonl", "write_jsonl",
    "EncoderConfig", "Model", "ModelSnapshot",
    "AccuracyMatrix", "average_accuracy", "bwt", "strict_accuracy",
    "LossWeights", "MemoryStore", "PseudoSample",
    "RunConfig", "TrainerState", "run_experiment",
    "__version__",
]
