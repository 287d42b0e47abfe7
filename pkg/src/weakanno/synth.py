"""Synthetic benchmark suites for exercising the pipeline end to end.

Three generators: a multi-mode embedding suite for cluster-count sweeps, an
overlap-heavy variant with boundary outliers for threshold sweeps, and a
sensor suite pairing class-specific sinusoid streams with clusterable clip
embeddings for the training scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import (
    EmbeddingSet,
    LabelTrack,
    SensorSeries,
    WindowingSpec,
    clip_ground_truth,
    save_embeddings,
    save_label_track,
    save_sensor_series,
)

CLIP_WINDOW = WindowingSpec(length_s=4.0, stride_s=1.0)
# embedding-only suites have no temporal structure; non-overlapping spans keep
# the clip labels and the label-track round trip exactly consistent
FLAT_WINDOW = WindowingSpec(length_s=4.0, stride_s=4.0)


@dataclass
class SynthParticipant:
    embeddings: EmbeddingSet
    gt_labels: np.ndarray
    label_names: list[str]
    label_track: LabelTrack | None = None
    series: SensorSeries | None = None


def _activity_names(n_activities: int) -> list[str]:
    return ["null"] + [f"activity_{i:02d}" for i in range(1, n_activities + 1)]


def _clip_spans(n_clips: int, spec: WindowingSpec = CLIP_WINDOW) -> np.ndarray:
    starts = np.arange(n_clips) * spec.stride_s
    return np.stack([starts, starts + spec.length_s], axis=1)


def cluster_suite(n_participants: int = 5, n_activities: int = 10,
                  modes_per_activity: int = 2, dim: int = 16, n_clips: int = 2000,
                  separation: float = 10.0, spread: float = 1.0,
                  seed: int = 0) -> dict[str, SynthParticipant]:
    """Embedding-only suite: every activity is a mixture of Gaussian modes.

    ``separation`` scales the distance between mode centers relative to the
    per-coordinate ``spread``. With fewer clusters than modes the mixture is
    forced to merge modes of different activities, so labelling accuracy
    grows with the cluster count.
    """
    root = np.random.SeedSequence(seed)
    names = _activity_names(n_activities)
    n_modes = n_activities * modes_per_activity
    suite = {}
    for p, child in enumerate(root.spawn(n_participants)):
        rng = np.random.default_rng(child)
        centers = separation * rng.standard_normal((n_modes, dim)) / np.sqrt(dim)
        mode_activity = np.repeat(np.arange(1, n_activities + 1), modes_per_activity)
        modes = rng.integers(n_modes, size=n_clips)
        clips = centers[modes] + spread * rng.standard_normal((n_clips, dim))
        labels = mode_activity[modes]
        pid = f"p{p + 1:02d}"
        embeddings = EmbeddingSet(participant_id=pid, clips=clips,
                                  clip_spans=_clip_spans(n_clips, FLAT_WINDOW),
                                  source_tag="synth")
        suite[pid] = SynthParticipant(embeddings=embeddings, gt_labels=labels,
                                      label_names=names)
    return suite


def overlap_suite(n_participants: int = 5, n_activities: int = 10,
                  modes_per_activity: int = 2, dim: int = 16, n_clips: int = 1000,
                  separation: float = 12.0, spread: float = 1.0,
                  tail_sigma: float = 1.0, scale_cap: float = 10.0,
                  drift_lo: float = 0.4, drift_hi: float = 0.8,
                  seed: int = 0) -> dict[str, SynthParticipant]:
    """Overlap-heavy variant of the cluster suite for threshold sweeps.

    Per-clip noise scales follow a capped lognormal, so centroid distances
    get the heavy tail that median-scaled cuts need, and large-scale clips
    drift toward a random other activity's mode, which makes the mislabeling
    probability grow with distance.
    """
    root = np.random.SeedSequence(seed)
    names = _activity_names(n_activities)
    n_modes = n_activities * modes_per_activity
    suite = {}
    for p, child in enumerate(root.spawn(n_participants)):
        rng = np.random.default_rng(child)
        centers = separation * rng.standard_normal((n_modes, dim)) / np.sqrt(dim)
        mode_activity = np.repeat(np.arange(1, n_activities + 1), modes_per_activity)
        modes = rng.integers(n_modes, size=n_clips)
        scales = np.clip(np.exp(tail_sigma * rng.standard_normal(n_clips)),
                         1.0, scale_cap)
        other = (modes + rng.integers(1, n_modes, size=n_clips)) % n_modes
        drift = (np.clip((scales - 1.0) / 5.0, 0.0, 1.0)
                 * rng.uniform(drift_lo, drift_hi, size=n_clips))
        base = ((1.0 - drift)[:, None] * centers[modes]
                + drift[:, None] * centers[other])
        clips = base + (scales * spread)[:, None] * rng.standard_normal((n_clips, dim))
        labels = mode_activity[modes]
        pid = f"p{p + 1:02d}"
        embeddings = EmbeddingSet(participant_id=pid, clips=clips,
                                  clip_spans=_clip_spans(n_clips, FLAT_WINDOW),
                                  source_tag="synth")
        suite[pid] = SynthParticipant(embeddings=embeddings, gt_labels=labels,
                                      label_names=names)
    return suite


def _segment_plan(rng: np.random.Generator, n_classes: int,
                  duration_s: float) -> list[tuple[int, float]]:
    """Alternating activity segments with occasional NULL gaps, 1 s grid."""
    plan: list[tuple[int, float]] = []
    total = 0.0
    while total < duration_s:
        if plan and rng.random() < 0.25:
            label, length = 0, float(rng.integers(4, 9))
        else:
            label = int(rng.integers(1, n_classes))
            length = float(rng.integers(8, 17))
        plan.append((label, length))
        total += length
    return plan


def sensor_suite(n_participants: int = 5, n_classes: int = 6, dim: int = 16,
                 rate_hz: float = 50.0, duration_s: float = 720.0,
                 embed_spread: float = 1.0, embed_separation: float = 7.0,
                 sensor_noise: float = 0.35, amplitude: float = 2.0,
                 offset_scale: float = 1.5, seed: int = 0) -> dict[str, SynthParticipant]:
    """Sensor suite: class-specific sinusoid streams plus clip embeddings.

    Each activity combines a class frequency with per-channel offsets, the
    way orientation shifts the gravity component of a worn accelerometer.
    Clip embeddings are time-share mixtures of per-class centers, so clips
    straddling segment boundaries land between clusters and pick up the
    structured label noise the weak pipeline produces on real data.
    """
    root = np.random.SeedSequence(seed)
    names = ["null"] + [f"class_{i}" for i in range(1, n_classes)]
    suite = {}
    for p, child in enumerate(root.spawn(n_participants)):
        rng = np.random.default_rng(child)
        plan = _segment_plan(rng, n_classes, duration_s)
        total_s = sum(length for _, length in plan)
        n_samples = int(round(total_s * rate_hz))
        timestamps = np.arange(n_samples) / rate_hz
        # orientation-like offsets: signed axis directions under a random
        # rotation keep every class pair at least sqrt(2)*scale apart
        axes = np.vstack([np.eye(3), -np.eye(3)])
        rotation, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        offsets = np.zeros((n_classes, 3))
        for a in range(1, n_classes):
            offsets[a] = offset_scale * axes[(a - 1) % 6] @ rotation
        step_labels = np.zeros(n_samples, dtype=np.int64)
        channels = sensor_noise * rng.standard_normal((n_samples, 3))
        cursor = 0.0
        for label, length in plan:
            lo = int(round(cursor * rate_hz))
            hi = min(int(round((cursor + length) * rate_hz)), n_samples)
            cursor += length
            step_labels[lo:hi] = label
            if label == 0:
                continue
            freq = float(label)  # 1 Hz per class step keeps 1 s windows separable
            phase = rng.uniform(0.0, 2.0 * np.pi)  # activities are not phase-locked
            local = timestamps[lo:hi]
            for ch in range(3):
                channels[lo:hi, ch] += offsets[label, ch] + amplitude * np.sin(
                    2.0 * np.pi * freq * local + phase + 0.5 * ch
                )
        pid = f"p{p + 1:02d}"
        series = SensorSeries(participant_id=pid, rate_hz=rate_hz,
                              channels=channels, timestamps=timestamps)
        track = LabelTrack(participant_id=pid, timestamps=timestamps,
                           label_ids=step_labels, label_names=names)

        spans = _clip_spans(int((total_s - CLIP_WINDOW.length_s)
                                // CLIP_WINDOW.stride_s) + 1)
        centers = embed_separation * rng.standard_normal((n_classes, dim)) / np.sqrt(dim)
        shares = np.zeros((spans.shape[0], n_classes))
        for i, (start, end) in enumerate(spans):
            lo = int(round(start * rate_hz))
            hi = min(int(round(end * rate_hz)), n_samples)
            counts = np.bincount(step_labels[lo:hi], minlength=n_classes)
            shares[i] = counts / counts.sum()
        clips = shares @ centers + embed_spread * rng.standard_normal((spans.shape[0], dim))
        embeddings = EmbeddingSet(participant_id=pid, clips=clips, clip_spans=spans,
                                  source_tag="synth")
        gt_labels = clip_ground_truth(track, spans)
        suite[pid] = SynthParticipant(embeddings=embeddings, gt_labels=gt_labels,
                                      label_names=names, label_track=track,
                                      series=series)
    return suite


def write_suite(suite: dict[str, SynthParticipant], root, source_tag: str = "synth") -> None:
    """Materialize a suite in the dataset layout the CLI ingests."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = next(iter(suite.values())).label_names
    (root / "labels.txt").write_text("".join(f"{n}\n" for n in names))
    for pid, part in sorted(suite.items()):
        pdir = root / pid
        pdir.mkdir(exist_ok=True)
        save_embeddings(part.embeddings, pdir / f"embeddings_{source_tag}.wemb")
        if part.label_track is not None:
            save_label_track(part.label_track, pdir / "labels.csv")
        else:
            # embedding-only suites still need a track for oracle annotation
            spans = part.embeddings.clip_spans
            centers = 0.5 * (spans[:, 0] + spans[:, 1])
            track = LabelTrack(participant_id=pid, timestamps=centers,
                               label_ids=part.gt_labels, label_names=names)
            save_label_track(track, pdir / "labels.csv")
        if part.series is not None:
            save_sensor_series(part.series, pdir / "sensors.csv")
