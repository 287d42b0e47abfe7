"""Weak-annotation pipeline: cluster clip embeddings, annotate only centroid
clips, propagate and threshold the labels, transfer them to sensor streams and
train noise-robust classifiers."""

__version__ = "0.1.0"

from . import annotate, evaluation, gmm, ingest, synth, transfer, weaktrain  # noqa: F401
from .errors import (  # noqa: F401
    AlignmentError,
    ConfigError,
    DataError,
    EmptyDataError,
    FormatError,
    NumericalError,
    PipelineError,
    ShapeError,
    StateError,
)
