"""Recurrent entity networks with question-dependent gating, trained by
tape-based reverse-mode differentiation, plus desk-scale datasets and tools.
"""

__version__ = "0.1.0"

from .cell import CellParams, GateTrace, MemoryState
from .data import (RawStory, SplitDataset, Story, Vocabulary, build_vocab,
                   encode_story, gen_entity_cloze, gen_single_fact,
                   parse_babi, prepare_dataset, serialize_babi)
from .estimator import QdrenClassifier, check_stories
from .model import (ModelConfig, ModelParams, forward, init_params,
                    load_checkpoint, save_checkpoint)
from .tensor import Tape, Tensor, clip_gradients, finite_diff_check
from .training import SearchSpace, TrainReport, compare_modes, evaluate, random_search, train

__all__ = [
    "CellParams", "GateTrace", "MemoryState",
    "RawStory", "SplitDataset", "Story", "Vocabulary", "build_vocab",
    "encode_story", "gen_entity_cloze", "gen_single_fact", "parse_babi",
    "prepare_dataset", "serialize_babi",
    "QdrenClassifier", "check_stories",
    "ModelConfig", "ModelParams", "forward", "init_params",
    "load_checkpoint", "save_checkpoint",
    "Tape", "Tensor", "clip_gradients", "finite_diff_check",
    "SearchSpace", "TrainReport", "compare_modes", "evaluate",
    "random_search", "train",
]
