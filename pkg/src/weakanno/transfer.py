"""Projection of clip-level weak labels onto sensor streams and construction
of windowed training datasets for the classifier scenarios."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .annotate import WeakLabelSet
from .errors import AlignmentError, ConfigError, EmptyDataError
from .ingest import LabelTrack, SensorSeries, WindowingSpec

SCENARIO_KINDS = ("fully-supervised", "few-shot", "random", "weak")


@dataclass
class TimestepTrack:
    """Per-timestep labels aligned to a sensor series; ``valid`` is False where
    no retained clip covers the timestep."""

    labels: np.ndarray
    valid: np.ndarray


@dataclass
class LabeledWindowSet:
    """Flattened sliding windows with one label and one time span per window.

    ``window_weights`` holds inverse-frequency class weights over the kept
    windows; classes absent from the set weigh zero.
    """

    windows: np.ndarray
    window_labels: np.ndarray
    window_weights: np.ndarray
    window_spans: np.ndarray
    provenance: str = ""

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]

    @property
    def n_classes(self) -> int:
        return self.window_weights.shape[0]


def labels_to_timesteps(weak: WeakLabelSet, spans: np.ndarray,
                        series: SensorSeries) -> TimestepTrack:
    """Give each sensor timestep the label of the retained clip whose span
    center lies nearest; timesteps covered only by omitted clips (or by no
    clip at all) are masked out."""
    spans = np.asarray(spans, dtype=np.float64)
    if spans.shape[0] != weak.n_clips:
        raise AlignmentError(
            f"{spans.shape[0]} spans for {weak.n_clips} weak-labeled clips"
        )
    ts = series.timestamps
    starts = spans[:, 0]
    ends = spans[:, 1]
    if ts[-1] < starts[0] or ts[0] >= ends[-1]:
        raise AlignmentError("sensor series and clip spans do not overlap in time")
    centers = 0.5 * (starts + ends)
    # clips covering timestep tau form the contiguous index range [lo, hi)
    lo = np.searchsorted(ends, ts, side="right")
    hi = np.searchsorted(starts, ts, side="right")
    n = ts.shape[0]
    best_dist = np.full(n, np.inf)
    best_clip = np.zeros(n, dtype=np.int64)
    max_cover = int(max(0, (hi - lo).max()))
    for k in range(max_cover):
        idx = lo + k
        active = idx < hi
        safe = np.where(active, idx, 0)
        usable = active & weak.retained[safe]
        dist = np.where(usable, np.abs(centers[safe] - ts), np.inf)
        better = dist < best_dist  # strict: earlier (smaller) clip index wins ties
        best_dist = np.where(better, dist, best_dist)
        best_clip = np.where(better, safe, best_clip)
    valid = np.isfinite(best_dist)
    labels = np.where(valid, weak.labels[best_clip], 0)
    return TimestepTrack(labels=labels.astype(np.int64), valid=valid)


def ground_truth_to_timesteps(track: LabelTrack, series: SensorSeries) -> TimestepTrack:
    """Nearest-sample projection of a ground-truth track onto sensor timesteps."""
    if track.timestamps.size == 0:
        raise EmptyDataError("ground-truth track is empty")
    ts = series.timestamps
    pos = np.searchsorted(track.timestamps, ts)
    left = np.clip(pos - 1, 0, track.timestamps.size - 1)
    right = np.clip(pos, 0, track.timestamps.size - 1)
    pick_left = np.abs(ts - track.timestamps[left]) <= np.abs(track.timestamps[right] - ts)
    nearest = np.where(pick_left, left, right)
    return TimestepTrack(labels=track.label_ids[nearest].copy(),
                         valid=np.ones(ts.shape[0], dtype=bool))


def _class_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=n_classes)
    weights = np.zeros(n_classes, dtype=np.float64)
    present = counts > 0
    weights[present] = labels.shape[0] / (n_classes * counts[present])
    return weights


def make_windows(series: SensorSeries, track: TimestepTrack, spec: WindowingSpec,
                 n_classes: int, provenance: str = "") -> LabeledWindowSet:
    """Slide a window over the series; label each window by the majority of
    its unmasked timesteps (ties to the smallest id) and drop windows with
    more than 50% masked content."""
    width = int(round(spec.length_s * series.rate_hz))
    step = int(round(spec.stride_s * series.rate_hz))
    if width < 1 or step < 1:
        raise ConfigError("window and stride must each cover at least one sample")
    n = series.n_samples
    if track.labels.shape[0] != n:
        raise AlignmentError("timestep track does not match the series length")
    if n < width:
        raise EmptyDataError(f"{n} samples cannot fill one {spec.length_s}s window")
    n_windows = (n - width) // step + 1
    rows, labels, spans = [], [], []
    for m in range(n_windows):
        sl = slice(m * step, m * step + width)
        valid = track.valid[sl]
        if 2 * int((~valid).sum()) > width:
            continue
        visible = track.labels[sl][valid]
        counts = np.bincount(visible, minlength=n_classes)
        labels.append(int(np.argmax(counts)))
        rows.append(series.channels[sl].reshape(-1))
        start = series.timestamps[m * step]
        spans.append((start, start + width / series.rate_hz))
    if not rows:
        raise EmptyDataError("every window was dropped for excessive masking")
    label_arr = np.asarray(labels, dtype=np.int64)
    return LabeledWindowSet(
        windows=np.asarray(rows),
        window_labels=label_arr,
        window_weights=_class_weights(label_arr, n_classes),
        window_spans=np.asarray(spans),
        provenance=provenance,
    )


def subset_windows(window_set: LabeledWindowSet, keep: np.ndarray,
                   provenance: str) -> LabeledWindowSet:
    """Select windows by boolean mask or index array; class weights are
    recomputed from the surviving windows."""
    keep = np.asarray(keep)
    labels = window_set.window_labels[keep]
    if labels.size == 0:
        raise EmptyDataError(f"scenario {provenance!r} selected no windows")
    return LabeledWindowSet(
        windows=window_set.windows[keep],
        window_labels=labels,
        window_weights=_class_weights(labels, window_set.n_classes),
        window_spans=window_set.window_spans[keep],
        provenance=provenance,
    )


def _windows_overlapping(window_set: LabeledWindowSet, spans: np.ndarray) -> np.ndarray:
    if spans.shape[0] == 0:
        return np.zeros(window_set.n_windows, dtype=bool)
    ws = window_set.window_spans[:, 0][:, None]
    we = window_set.window_spans[:, 1][:, None]
    return np.any((ws < spans[None, :, 1]) & (spans[None, :, 0] < we), axis=1)


def build_scenario(name: str, full_gt: LabeledWindowSet, weak: LabeledWindowSet,
                   annotated_clips, clip_spans: np.ndarray,
                   rng_seed: int) -> LabeledWindowSet:
    """Materialize one training scenario.

    fully-supervised keeps the ground-truth set; few-shot keeps only windows
    overlapping the annotated centroid clips; random draws an equally sized
    seeded clip sample; weak returns the weak-label window set.
    """
    if name not in SCENARIO_KINDS:
        raise ConfigError(f"unknown scenario {name!r}, expected one of {SCENARIO_KINDS}")
    if name == "fully-supervised":
        return replace(full_gt, provenance=name)
    if name == "weak":
        return replace(weak, provenance=name)
    clip_spans = np.asarray(clip_spans, dtype=np.float64)
    annotated = sorted(int(i) for i in annotated_clips)
    if name == "few-shot":
        selected = np.asarray(annotated, dtype=np.int64)
    else:
        rng = np.random.default_rng(rng_seed)
        selected = np.sort(rng.choice(clip_spans.shape[0], size=len(annotated),
                                      replace=False))
    keep = _windows_overlapping(full_gt, clip_spans[selected])
    return subset_windows(full_gt, keep, provenance=name)


def split_series(series: SensorSeries, fraction: float) -> tuple[SensorSeries, SensorSeries]:
    """Temporal head/tail split at a sample fraction, for train/test carving."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    cut = int(round(series.n_samples * fraction))
    if cut < 1 or cut >= series.n_samples:
        raise EmptyDataError("split leaves an empty side")
    head = SensorSeries(series.participant_id, series.rate_hz,
                        series.channels[:cut], series.timestamps[:cut])
    tail = SensorSeries(series.participant_id, series.rate_hz,
                        series.channels[cut:], series.timestamps[cut:])
    return head, tail


def write_scenario_manifest(path, name: str, threshold: float, budget: int,
                            window_set: LabeledWindowSet) -> None:
    """JSON manifest consumed by the report generator."""
    counts = np.bincount(window_set.window_labels, minlength=window_set.n_classes)
    payload = {
        "scenario": name,
        "threshold": None if np.isinf(threshold) else float(threshold),
        "budget": int(budget),
        "window_counts": {str(i): int(c) for i, c in enumerate(counts)},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
