"""Loading, validation, windowing and combination of embeddings, labels and sensor data.

All loaders are pure: they read a file, validate it, and return an immutable
value object. Nothing in here mutates shared state, so every function is safe
to call concurrently.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentError,
    ConfigError,
    DataError,
    EmptyDataError,
    FormatError,
    ShapeError,
)

EMBEDDING_MAGIC = b"WEMB"
EMBEDDING_VERSION = 1

#: label id reserved for the background / no-activity class
NULL_LABEL = 0

_SPAN_ATOL = 1e-6


@dataclass(frozen=True)
class WindowingSpec:
    """Sliding-window geometry in seconds."""

    length_s: float
    stride_s: float

    def __post_init__(self):
        if not (0.0 < self.stride_s <= self.length_s):
            raise ConfigError(
                f"invalid windowing: need 0 < stride <= length, "
                f"got stride={self.stride_s}, length={self.length_s}"
            )

    @property
    def overlap(self) -> float:
        return 1.0 - self.stride_s / self.length_s


def _check_finite(matrix: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(matrix)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(f"{what} contains a non-finite value at row {row}, column {col}")


@dataclass
class EmbeddingSet:
    """Per-participant matrix of clip embeddings plus clip time metadata.

    ``clips`` has one row per clip; ``clip_spans`` holds the matching
    (start_s, end_s) pairs. All clips share a single duration.
    """

    participant_id: str
    clips: np.ndarray
    clip_spans: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        self.clips = np.asarray(self.clips)
        self.clip_spans = np.asarray(self.clip_spans, dtype=np.float64)
        if self.clips.ndim != 2 or self.clips.shape[0] < 1 or self.clips.shape[1] < 1:
            raise ShapeError(f"clips must be a T x E matrix with T,E >= 1, got {self.clips.shape}")
        if self.clip_spans.shape != (self.clips.shape[0], 2):
            raise ShapeError(
                f"clip_spans must be shaped ({self.clips.shape[0]}, 2), got {self.clip_spans.shape}"
            )
        _check_finite(self.clips, "embedding matrix")
        _check_finite(self.clip_spans, "clip spans")
        starts = self.clip_spans[:, 0]
        if np.any(np.diff(starts) <= 0):
            raise DataError("clip spans must be strictly increasing by start time")
        durations = self.clip_spans[:, 1] - self.clip_spans[:, 0]
        if np.any(durations <= 0) or np.ptp(durations) > _SPAN_ATOL:
            raise DataError("all clips must share one positive duration")

    @property
    def n_clips(self) -> int:
        return self.clips.shape[0]

    @property
    def dim(self) -> int:
        return self.clips.shape[1]

    @property
    def clip_length_s(self) -> float:
        return float(self.clip_spans[0, 1] - self.clip_spans[0, 0])


@dataclass
class LabelTrack:
    """Timestamped ground-truth labels with an explicit name vocabulary.

    ``label_names[0]`` is the NULL class by convention.
    """

    participant_id: str
    timestamps: np.ndarray
    label_ids: np.ndarray
    label_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.label_ids = np.asarray(self.label_ids, dtype=np.int64)
        if self.timestamps.shape != self.label_ids.shape or self.timestamps.ndim != 1:
            raise ShapeError("timestamps and label ids must be parallel 1-D arrays")
        if len(self.label_names) < 2:
            raise DataError("label vocabulary needs at least the NULL class and one activity")
        if self.timestamps.size and np.any(np.diff(self.timestamps) <= 0):
            raise DataError("label timestamps must be strictly increasing")
        if self.label_ids.size and (
            self.label_ids.min() < 0 or self.label_ids.max() >= len(self.label_names)
        ):
            raise DataError("label id outside the 0..A-1 vocabulary range")

    @property
    def n_classes(self) -> int:
        return len(self.label_names)


@dataclass
class SensorSeries:
    """Timestamped multichannel sensor stream."""

    participant_id: str
    rate_hz: float
    channels: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.channels.ndim != 2:
            raise ShapeError("channels must be an N x D matrix")
        if self.timestamps.shape != (self.channels.shape[0],):
            raise ShapeError("one timestamp per sample required")
        if self.rate_hz <= 0:
            raise DataError("rate_hz must be positive")
        _check_finite(self.channels, "sensor matrix")
        if self.timestamps.size > 1:
            deltas = np.diff(self.timestamps)
            if np.any(deltas <= 0):
                raise DataError("sensor timestamps must be strictly increasing")
            implied = 1.0 / float(np.median(deltas))
            if abs(implied - self.rate_hz) > 0.01 * self.rate_hz:
                raise DataError(
                    f"rate_hz {self.rate_hz} inconsistent with median timestamp delta "
                    f"(implies {implied:.4f} Hz)"
                )

    @property
    def n_samples(self) -> int:
        return self.channels.shape[0]

    @property
    def n_channels(self) -> int:
        return self.channels.shape[1]


def save_embeddings(embeddings: EmbeddingSet, path) -> None:
    """Write the canonical binary embedding file (magic ``WEMB``)."""
    clips = np.ascontiguousarray(embeddings.clips, dtype="<f4")
    spans = np.ascontiguousarray(embeddings.clip_spans, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<III", EMBEDDING_VERSION, embeddings.n_clips, embeddings.dim))
        fh.write(clips.tobytes())
        fh.write(struct.pack("<I", 1))
        fh.write(spans.tobytes())


def save_embeddings_csv(embeddings: EmbeddingSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_s", "end_s"] + [f"f{i}" for i in range(embeddings.dim)])
        for span, row in zip(embeddings.clip_spans, embeddings.clips):
            writer.writerow([repr(float(span[0])), repr(float(span[1]))] + [repr(float(v)) for v in row])


def load_embeddings(path, expected_dim: int | None = None,
                    participant_id: str | None = None,
                    source_tag: str | None = None) -> EmbeddingSet:
    """Load a binary (``WEMB``) or CSV embedding file and validate it."""
    path = Path(path)
    if participant_id is None:
        participant_id = path.stem
    if source_tag is None:
        source_tag = path.stem
    raw = path.read_bytes()
    if raw[:4] == EMBEDDING_MAGIC:
        clips, spans = _decode_binary_embeddings(raw, path)
    elif raw[:7] == b"start_s":
        clips, spans = _decode_csv_embeddings(path)
    else:
        raise FormatError(f"{path}: unrecognized embedding file (bad magic)")
    if expected_dim is not None and clips.shape[1] != expected_dim:
        raise ShapeError(
            f"{path}: embedding dimension {clips.shape[1]} does not match expected {expected_dim}"
        )
    return EmbeddingSet(participant_id=participant_id, clips=clips,
                        clip_spans=spans, source_tag=source_tag)


def _decode_binary_embeddings(raw: bytes, path) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    version, n_clips, dim = struct.unpack_from("<III", raw, 4)
    if version != EMBEDDING_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n_clips < 1 or dim < 1:
        raise FormatError(f"{path}: header declares empty matrix ({n_clips} x {dim})")
    offset = 16
    need = n_clips * dim * 4
    if len(raw) < offset + need:
        raise FormatError(
            f"{path}: truncated matrix, expected {n_clips * dim} float32 values"
        )
    clips = np.frombuffer(raw, dtype="<f4", count=n_clips * dim, offset=offset)
    clips = clips.reshape(n_clips, dim).copy()
    offset += need
    if offset == len(raw):
        # span block absent: synthesize consecutive unit-length spans
        starts = np.arange(n_clips, dtype=np.float64)
        spans = np.stack([starts, starts + 1.0], axis=1)
        return clips, spans
    if len(raw) < offset + 4:
        raise FormatError(f"{path}: truncated span block flag")
    (flag,) = struct.unpack_from("<I", raw, offset)
    if flag != 1:
        raise FormatError(f"{path}: unknown span block flag {flag}")
    offset += 4
    if len(raw) != offset + 2 * n_clips * 4:
        raise FormatError(f"{path}: span block must hold exactly {2 * n_clips} float32 values")
    spans = np.frombuffer(raw, dtype="<f4", count=2 * n_clips, offset=offset)
    return clips, spans.reshape(n_clips, 2).copy()


def _decode_csv_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["start_s", "end_s"]:
            raise FormatError(f"{path}: CSV header must start with start_s,end_s")
        dim = len(header) - 2
        if dim < 1 or header[2:] != [f"f{i}" for i in range(dim)]:
            raise FormatError(f"{path}: CSV feature columns must be named f0..f{{E-1}}")
        spans, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise FormatError(f"{path}:{lineno}: expected {dim + 2} columns, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            spans.append(values[:2])
            rows.append(values[2:])
    if not rows:
        raise FormatError(f"{path}: no clips in CSV file")
    return np.asarray(rows, dtype=np.float64), np.asarray(spans, dtype=np.float64)


def pool_frames(frames: np.ndarray, spec: WindowingSpec, fps: float,
                participant_id: str = "", source_tag: str = "pooled") -> EmbeddingSet:
    """Average frame embeddings into overlapping clip embeddings.

    Clip ``t`` covers frame indices [round(t*stride*fps), round(t*stride*fps
    + length*fps)); trailing frames that do not fill a whole clip are dropped.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] < 1:
        raise ShapeError("frames must be an F x E matrix")
    _check_finite(frames, "frame matrix")
    n_frames = frames.shape[0]
    window = spec.length_s * fps
    step = spec.stride_s * fps
    if step < 1.0:
        raise ConfigError(f"stride of {spec.stride_s}s at {fps} fps is below one frame")
    if n_frames < window:
        raise EmptyDataError(
            f"{n_frames} frames cannot fill a single {spec.length_s}s clip at {fps} fps"
        )
    n_clips = int(math.floor((n_frames - window) / step)) + 1
    clips = np.empty((n_clips, frames.shape[1]), dtype=np.float64)
    spans = np.empty((n_clips, 2), dtype=np.float64)
    for t in range(n_clips):
        lo = int(round(t * step))
        hi = int(round(t * step + window))
        clips[t] = frames[lo:hi].mean(axis=0)
        spans[t] = (t * spec.stride_s, t * spec.stride_s + spec.length_s)
    return EmbeddingSet(participant_id=participant_id, clips=clips,
                        clip_spans=spans, source_tag=source_tag)


def concat_embeddings(a: EmbeddingSet, b: EmbeddingSet) -> EmbeddingSet:
    """Row-wise concatenation of two embedding sets of the same clips."""
    if a.participant_id != b.participant_id:
        raise AlignmentError(
            f"participants differ: {a.participant_id!r} vs {b.participant_id!r}"
        )
    if a.n_clips != b.n_clips:
        raise AlignmentError(f"clip counts differ: {a.n_clips} vs {b.n_clips}")
    if not np.allclose(a.clip_spans, b.clip_spans, atol=_SPAN_ATOL, rtol=0.0):
        raise AlignmentError("clip spans differ between the two embedding sets")
    return EmbeddingSet(
        participant_id=a.participant_id,
        clips=np.hstack([a.clips, b.clips]),
        clip_spans=a.clip_spans.copy(),
        source_tag=f"{a.source_tag}+{b.source_tag}",
    )


def normalize_embeddings(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Scale every clip embedding to unit L2 norm (explicit opt-in, default off)."""
    norms = np.linalg.norm(embeddings.clips, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DataError("cannot normalize a zero embedding vector")
    return replace(embeddings, clips=embeddings.clips / norms)


def clip_ground_truth(track: LabelTrack, spans: np.ndarray) -> np.ndarray:
    """Majority ground-truth label per clip span.

    Ties go to the smallest label id; clips not covered by any sample get NULL.
    """
    if track.timestamps.size == 0:
        raise DataError("cannot derive clip labels from an empty track")
    spans = np.asarray(spans, dtype=np.float64)
    los = np.searchsorted(track.timestamps, spans[:, 0], side="left")
    his = np.searchsorted(track.timestamps, spans[:, 1], side="left")
    labels = np.zeros(len(spans), dtype=np.int64)
    for i, (lo, hi) in enumerate(zip(los, his)):
        if hi > lo:
            counts = np.bincount(track.label_ids[lo:hi], minlength=track.n_classes)
            labels[i] = int(np.argmax(counts))
        else:
            labels[i] = NULL_LABEL
    return labels


def load_label_track(path, names_path, participant_id: str | None = None) -> LabelTrack:
    """Load a ``timestamp_s,label_id`` CSV plus its label-name sidecar."""
    path = Path(path)
    names = [line.rstrip("\n") for line in Path(names_path).read_text().splitlines()]
    names = [n for n in names if n != ""]
    timestamps, label_ids = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["timestamp_s", "label_id"]:
            raise FormatError(f"{path}: header must be timestamp_s,label_id")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                timestamps.append(float(row[0]))
                label_ids.append(int(row[1]))
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return LabelTrack(
        participant_id=participant_id if participant_id is not None else path.stem,
        timestamps=np.asarray(timestamps),
        label_ids=np.asarray(label_ids),
        label_names=names,
    )


def save_label_track(track: LabelTrack, path, names_path=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_s", "label_id"])
        for ts, lid in zip(track.timestamps, track.label_ids):
            writer.writerow([repr(float(ts)), int(lid)])
    if names_path is not None:
        Path(names_path).write_text("".join(f"{n}\n" for n in track.label_names))


def load_sensor_series(path, participant_id: str | None = None,
                       rate_hz: float | None = None) -> SensorSeries:
    """Load a ``timestamp_s,c0,...`` sensor CSV; rate is derived when omitted."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "timestamp_s":
            raise FormatError(f"{path}: header must start with timestamp_s")
        n_channels = len(header) - 1
        if n_channels < 1 or header[1:] != [f"c{i}" for i in range(n_channels)]:
            raise FormatError(f"{path}: channel columns must be named c0..c{{D-1}}")
        timestamps, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_channels + 1:
                raise FormatError(f"{path}:{lineno}: expected {n_channels + 1} columns")
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            timestamps.append(values[0])
            rows.append(values[1:])
    if not rows:
        raise EmptyDataError(f"{path}: no samples")
    timestamps = np.asarray(timestamps)
    if rate_hz is None:
        if timestamps.size < 2:
            raise DataError(f"{path}: cannot derive the rate from a single sample")
        rate_hz = 1.0 / float(np.median(np.diff(timestamps)))
    return SensorSeries(
        participant_id=participant_id if participant_id is not None else path.stem,
        rate_hz=rate_hz,
        channels=np.asarray(rows),
        timestamps=timestamps,
    )


def save_sensor_series(series: SensorSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_s"] + [f"c{i}" for i in range(series.n_channels)])
        for ts, row in zip(series.timestamps, series.channels):
            writer.writerow([repr(float(ts))] + [repr(float(v)) for v in row])
