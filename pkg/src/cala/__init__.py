"""Class-aware logit adjustment for few-shot class-incremental learning on frozen embeddings."""

from .adapter import AdapterConfig, AdapterMlp, ClassAwareLogitAdapter, pseudo_train
from .backbone import FrozenRandomMLP, IdentityMap
from .data import (EmbeddingDataset, SessionSchedule, SyntheticSpec, load_dataset, make_synthetic,
                   save_dataset, split_sessions)
from .la_agnostic import AgnosticLogitAdjuster, train_alpha
from .metrics import SessionReport, summarize
from .protonet import IncrementalPrototypeClassifier, PrototypeClassifier
from .runner import RunConfig, run_fscil

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig", "AdapterMlp", "AgnosticLogitAdjuster", "ClassAwareLogitAdapter", "EmbeddingDataset",
    "FrozenRandomMLP", "IdentityMap", "IncrementalPrototypeClassifier", "PrototypeClassifier", "RunConfig",
    "SessionReport", "SessionSchedule", "SyntheticSpec", "load_dataset", "make_synthetic", "pseudo_train",
    "run_fscil", "save_dataset", "split_sessions", "summarize", "train_alpha",
]
