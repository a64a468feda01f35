"""Retrieval-augmented long-horizon forecasting with continuation proxies.

A query window retrieves correlated history windows from the training split,
transfers their observed continuations onto the query's scale, and a gate mixes
that proxy into a seasonal-trend linear forecaster.
"""

from .backbone import LinearBackbone, decompose, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .continuation import ContinuationConfig, construct, construct_batch
from .data import SplitSpec, extract_chains, load_csv, make_windows, prepare
from .fusion import fuse, gate
from .library import RetrievalLibrary, build_library, load_library, save_library
from .pipeline import Experiment
from .search import RetrievalConfig, search, search_batch
from .training import TrainConfig, train

__all__ = [
    "ContinuationConfig", "Experiment", "ExperimentConfig", "LinearBackbone",
    "RetrievalConfig", "RetrievalLibrary", "SplitSpec", "TrainConfig",
    "build_library", "construct", "construct_batch", "decompose", "extract_chains",
    "fuse", "gate", "load_checkpoint", "load_config", "load_csv", "load_library",
    "make_windows", "prepare", "save_checkpoint", "save_library", "search",
    "search_batch", "train",
]
