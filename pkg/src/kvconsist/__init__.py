"""Profile-consistency identification toolkit.

A classifier over (key-value profile, dialogue response) pairs that combines
a transformer over the linearized pair with a child-sum tree-LSTM over the
profile and response dependency structures, plus the surrounding machinery:
synthetic corpus generation with a rule oracle, two-stage training, response
reranking, and agreement statistics.
"""

from .core import (ConsistencyLabel, Dataset, Example, Profile, load_dataset,
                   save_dataset, template_render)
from .model import KvModel, KvModelConfig, PredictionResult, linearize, predict

__all__ = [
    "ConsistencyLabel", "Dataset", "Example", "Profile",
    "KvModel", "KvModelConfig", "PredictionResult",
    "linearize", "load_dataset", "predict", "save_dataset", "template_render",
]

__version__ = "0.1.0"
