"""RGB-event single-object tracking with modern Hopfield associative memory."""

from .boxes import BBox, giou, iou
from .config import TrackerConfig
from .exceptions import AMTError
from .hopfield import HopfieldLayer, HopfieldLookup, HopfieldRetriever, hopfield_assoc, retrieve
from .memory import TemplateEntry, TemplateMemory
from .metrics import evaluate
from .tracker import AMTTracker, track_sequence

__version__ = "0.1.0"

__all__ = [
    "AMTError",
    "AMTTracker",
    "BBox",
    "HopfieldLayer",
    "HopfieldLookup",
    "HopfieldRetriever",
    "TemplateEntry",
    "TemplateMemory",
    "TrackerConfig",
    "evaluate",
    "giou",
    "hopfield_assoc",
    "iou",
    "retrieve",
    "track_sequence",
]
