"""Cross-lingual cross-modal retrieval with multi-view semantic slots.

A numpy implementation of slot aggregation over visual descriptions,
visual/slot interaction, multi-level matching and English-guided soft
matching, trained with a small reverse-mode autodiff engine.
"""

__version__ = "0.1.0"

from .config import HyperParams
from .evaluation import evaluate_dataset, recall_metrics
from .features import SynthSpec, TripletDataset, generate_synthetic, load_features, save_features
from .model import RetrievalModel
from .trainer import fit, total_loss

__all__ = [
    "HyperParams", "RetrievalModel", "SynthSpec", "TripletDataset", "evaluate_dataset",
    "fit", "generate_synthetic", "load_features", "recall_metrics", "save_features",
    "total_loss",
]
