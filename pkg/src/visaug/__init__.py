"""Input augmentation for instruction-following manipulation policies.

Segment the first frame, filter the masks, tag them with numbers, let a
vision-language model pick the task-relevant ones, highlight them, and
propagate the highlights across the rest of the episode.
"""

from .masks import BinaryMask, MaskSet, DimensionError, CodecError
from .filters import FilterConfig
from .annotate import HighlightStyle, TagLayout
from .selection import SelectionResult, MockVlmConfig
from .backends import CorruptionConfig, SyntheticBackend
from .pipeline import PipelineConfig, preprocess, run_episode, augment_dataset
from .evalkit import EpisodeLog, score_run, classify_failure, aggregate

__version__ = "0.1.0"

__all__ = [
    "BinaryMask", "MaskSet", "DimensionError", "CodecError",
    "FilterConfig", "HighlightStyle", "TagLayout",
    "SelectionResult", "MockVlmConfig",
    "CorruptionConfig", "SyntheticBackend",
    "PipelineConfig", "preprocess", "run_episode", "augment_dataset",
    "EpisodeLog", "score_run", "classify_failure", "aggregate",
    "__version__",
]
