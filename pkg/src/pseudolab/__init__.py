"""Pseudo-label engineering and self-training orchestration for segmentation.

The toolkit screens candidate pseudo-labels by entropy, damps their
uncertain pixels, converts them into box-plus-point prompts for a
promptable segmenter, fuses the two predictions into corrected labels,
and drives the iterative expansion of a labeled pool. Neural segmenters
stay external, reached over a newline-delimited JSON protocol.
"""

from .entropy_filter import EdfConfig, EdfVerdict, evaluate_sample, rank_candidates
from .losses import LossConfig, LossReport, total_loss
from .manifest import Manifest, SampleRecord, split_dataset
from .pixmap import BinaryMask, EntropyMap, MapIOError, ProbMap, binarize, normalize, read_map, write_map
from .prompting import Component, DpcConfig, NoForegroundError, PromptSet, fuse, make_prompts
from .protocol import ProtocolError
from .selftrain import ExpansionPolicy, SelfTrainConfig, expansion_count, run_self_training

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "Component",
    "DpcConfig",
    "EdfConfig",
    "EdfVerdict",
    "EntropyMap",
    "ExpansionPolicy",
    "LossConfig",
    "LossReport",
    "Manifest",
    "MapIOError",
    "NoForegroundError",
    "ProbMap",
    "PromptSet",
    "ProtocolError",
    "SampleRecord",
    "SelfTrainConfig",
    "binarize",
    "evaluate_sample",
    "expansion_count",
    "fuse",
    "make_prompts",
    "normalize",
    "rank_candidates",
    "read_map",
    "run_self_training",
    "split_dataset",
    "total_loss",
    "write_map",
    "__version__",
]
