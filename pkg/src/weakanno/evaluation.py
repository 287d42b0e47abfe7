"""Labelling-accuracy statistics, cluster and threshold sweeps, and the
aggregated report tables.

Headline statistics are per-participant means: each participant's accuracy is
averaged over seeds first, then mean and sample standard deviation are taken
across participants.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import annotate, gmm
from .annotate import Threshold, WeakLabelSet
from .errors import ConfigError, EmptyDataError
from .ingest import EmbeddingSet
from .weaktrain import format_mean_std


def labelling_accuracy(weak: WeakLabelSet, gt_labels: np.ndarray) -> tuple[float, float]:
    """Fraction of retained clips whose propagated label matches ground truth,
    plus the retained coverage fraction."""
    gt_labels = np.asarray(gt_labels)
    if gt_labels.shape[0] != weak.n_clips:
        raise ConfigError(
            f"{gt_labels.shape[0]} ground-truth labels for {weak.n_clips} clips"
        )
    retained = weak.retained
    if not retained.any():
        raise EmptyDataError("no clips retained; labelling accuracy is undefined")
    accuracy = float((weak.labels[retained] == gt_labels[retained]).mean())
    return accuracy, weak.coverage


def weak_labels_for(embeddings: EmbeddingSet, gt_labels: np.ndarray, n_clusters: int,
                    seed: int, threshold: Threshold = Threshold("none"),
                    reg: float = 1e-6, max_iter: int = 200,
                    tol: float = 1e-4) -> WeakLabelSet:
    """One pass of the cluster -> centroid -> oracle -> propagate path."""
    model = gmm.fit(embeddings.clips, n_clusters, seed=seed, reg=reg,
                    max_iter=max_iter, tol=tol)
    assignment = gmm.assign(model, embeddings.clips)
    centroids = annotate.find_centroids(model, assignment)
    labels = annotate.annotate_oracle(centroids, gt_labels)
    weak = annotate.propagate(assignment, labels, embeddings, centroids)
    return annotate.apply_threshold(weak, threshold)


@dataclass
class SweepRow:
    axis: str
    seed: int
    participant_id: str
    accuracy: float
    coverage: float
    budget: int
    n_clips: int


@dataclass
class SweepAggregate:
    axis: str
    mean_accuracy: float
    std_accuracy: float
    mean_coverage: float
    budget_fraction: float


@dataclass
class SweepReport:
    axis_name: str
    rows: list[SweepRow]

    def axis_values(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows:
            if row.axis not in seen:
                seen.append(row.axis)
        return seen

    def aggregate(self) -> list[SweepAggregate]:
        out = []
        for axis in self.axis_values():
            rows = [r for r in self.rows if r.axis == axis]
            participants = sorted({r.participant_id for r in rows})
            per_participant = [
                float(np.mean([r.accuracy for r in rows if r.participant_id == p]))
                for p in participants
            ]
            coverages = [
                float(np.mean([r.coverage for r in rows if r.participant_id == p]))
                for p in participants
            ]
            budget_fracs = [r.budget / r.n_clips for r in rows]
            out.append(SweepAggregate(
                axis=axis,
                mean_accuracy=float(np.mean(per_participant)),
                std_accuracy=sample_std(per_participant),
                mean_coverage=float(np.mean(coverages)),
                budget_fraction=float(np.mean(budget_fracs)),
            ))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([self.axis_name, "seed", "participant",
                             "accuracy", "coverage", "budget"])
            for r in self.rows:
                writer.writerow([r.axis, r.seed, r.participant_id,
                                 f"{r.accuracy:.6f}", f"{r.coverage:.6f}", r.budget])

    def summary_text(self) -> str:
        lines = [f"{self.axis_name:>12}  accuracy            coverage  annotated"]
        for agg in self.aggregate():
            lines.append(
                f"{agg.axis:>12}  {format_mean_std(100 * agg.mean_accuracy, 100 * agg.std_accuracy):<18}"
                f"  {100 * agg.mean_coverage:7.2f}%  {100 * agg.budget_fraction:8.2f}%"
            )
        return "\n".join(lines) + "\n"


def sample_std(values) -> float:
    """Standard deviation with the n-1 denominator; zero for fewer than two values."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1))


def sweep_clusters(embeddings: Mapping[str, EmbeddingSet],
                   gt_labels: Mapping[str, np.ndarray],
                   c_values: list[int], seeds: list[int],
                   threshold: Threshold = Threshold("none"),
                   reg: float = 1e-6, max_iter: int = 200,
                   tol: float = 1e-4) -> SweepReport:
    """Full pipeline per (participant, C, seed), reported along the C axis."""
    if not seeds:
        raise ConfigError("at least one seed is required")
    if sorted(c_values) != list(c_values):
        raise ConfigError("cluster counts must be sorted ascending")
    for pid, emb in embeddings.items():
        too_big = [c for c in c_values if c > emb.n_clips]
        if too_big:
            raise ConfigError(
                f"participant {pid}: C={too_big[0]} exceeds the {emb.n_clips} available clips"
            )
    rows = []
    for c in c_values:
        for seed in seeds:
            for pid in sorted(embeddings):
                weak = weak_labels_for(embeddings[pid], gt_labels[pid], c, seed,
                                       threshold=threshold, reg=reg,
                                       max_iter=max_iter, tol=tol)
                accuracy, coverage = labelling_accuracy(weak, gt_labels[pid])
                rows.append(SweepRow(str(c), seed, pid, accuracy, coverage,
                                     weak.annotation_budget, weak.n_clips))
    return SweepReport(axis_name="C", rows=rows)


def sweep_thresholds(embeddings: Mapping[str, EmbeddingSet],
                     gt_labels: Mapping[str, np.ndarray],
                     n_clusters: int, thresholds: list[Threshold], seeds: list[int],
                     reg: float = 1e-6, max_iter: int = 200,
                     tol: float = 1e-4) -> SweepReport:
    """Single-C fit per (participant, seed); retention recomputed per threshold."""
    if not seeds:
        raise ConfigError("at least one seed is required")
    rows = []
    base: dict[tuple[str, int], WeakLabelSet] = {}
    for seed in seeds:
        for pid in sorted(embeddings):
            if n_clusters > embeddings[pid].n_clips:
                raise ConfigError(
                    f"participant {pid}: C={n_clusters} exceeds the available clips"
                )
            base[(pid, seed)] = weak_labels_for(embeddings[pid], gt_labels[pid],
                                                n_clusters, seed, reg=reg,
                                                max_iter=max_iter, tol=tol)
    for threshold in thresholds:
        for seed in seeds:
            for pid in sorted(embeddings):
                weak = annotate.apply_threshold(base[(pid, seed)], threshold)
                accuracy, coverage = labelling_accuracy(weak, gt_labels[pid])
                rows.append(SweepRow(threshold.label(), seed, pid, accuracy,
                                     coverage, weak.annotation_budget, weak.n_clips))
    return SweepReport(axis_name="threshold", rows=rows)
