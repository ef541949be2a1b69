"""Learned rank indexes over sorted keys built from optimal piecewise linear models."""
from .errors import PGMError
from .index import ApproxRange, Kind, PGMIndex, QueryResult, build, deserialize, load, save, serialize
from .pla import PLAModel, Segment, build_optimal_pla, build_shrinking_cone

__all__ = [
    "ApproxRange", "Kind", "PGMError", "PGMIndex", "PLAModel", "QueryResult", "Segment",
    "build", "build_optimal_pla", "build_shrinking_cone", "deserialize", "load", "save", "serialize",
]
__version__ = "0.1.0"
