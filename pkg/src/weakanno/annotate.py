"""Centroid selection, label propagation, distance thresholding and the
annotation session.

A centroid clip is the member clip with the highest log-density under its own
component. Its label, supplied by an oracle or a human, is copied to every
clip in the cluster; clips whose L2 distance to the centroid embedding
exceeds the threshold are flagged as omitted.
"""

from __future__ import annotations

import csv
import json
import math
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, StateError
from .gmm import ClusterAssignment, GmmModel
from .ingest import EmbeddingSet


@dataclass(frozen=True)
class Centroid:
    cluster_id: int
    clip_index: int
    log_density: float


@dataclass
class CentroidSet:
    """Centroid clip per non-empty cluster, keyed by cluster id."""

    by_cluster: dict[int, Centroid]

    def cluster_ids(self) -> list[int]:
        return sorted(self.by_cluster)

    def clip_indices(self) -> list[int]:
        return [self.by_cluster[c].clip_index for c in self.cluster_ids()]

    def __len__(self) -> int:
        return len(self.by_cluster)

    def __getitem__(self, cluster_id: int) -> Centroid:
        return self.by_cluster[cluster_id]

    def __contains__(self, cluster_id: int) -> bool:
        return cluster_id in self.by_cluster

    def __iter__(self):
        return (self.by_cluster[c] for c in self.cluster_ids())


@dataclass
class WeakLabelSet:
    """Propagated labels plus centroid distances and retention flags, per clip."""

    cluster_ids: np.ndarray
    labels: np.ndarray
    distances: np.ndarray
    retained: np.ndarray
    annotation_budget: int
    threshold: float = math.inf

    @property
    def n_clips(self) -> int:
        return self.labels.shape[0]

    @property
    def coverage(self) -> float:
        return float(self.retained.mean())


@dataclass(frozen=True)
class AnnotatorRequest:
    request_id: str
    participant_id: str
    clip_index: int
    start_s: float
    end_s: float
    cluster_id: int
    media_hint: str | None = None


@dataclass(frozen=True)
class Threshold:
    """Distance cut specification: absolute units or a multiple of the median
    centroid distance. ``none`` keeps every clip."""

    kind: str  # "none" | "absolute" | "median-scaled"
    value: float = 0.0

    def resolve(self, distances: np.ndarray) -> float:
        if self.kind == "none":
            return math.inf
        if self.kind == "absolute":
            return float(self.value)
        if self.kind == "median-scaled":
            return float(self.value) * float(np.median(distances))
        raise ConfigError(f"unknown threshold kind {self.kind!r}")

    def label(self) -> str:
        if self.kind == "none":
            return "inf"
        if self.kind == "absolute":
            return f"{self.value:g}"
        return f"{self.value:g}xmedian"

    @staticmethod
    def parse(text: str) -> "Threshold":
        text = text.strip().lower()
        if text in ("", "inf", "none", "infinity"):
            return Threshold("none")
        if text in ("t-4", "t4"):
            return Threshold("absolute", 4.0)
        if text in ("t-6", "t6"):
            return Threshold("absolute", 6.0)
        if text.endswith("xmedian"):
            return Threshold("median-scaled", float(text[: -len("xmedian")]))
        try:
            return Threshold("absolute", float(text))
        except ValueError:
            raise ConfigError(f"cannot parse threshold {text!r}") from None


#: presets named after the absolute cuts used for the T-4 / T-6 training variants
THRESHOLD_PRESETS = {"T-4": Threshold("absolute", 4.0), "T-6": Threshold("absolute", 6.0)}


def find_centroids(model: GmmModel, assignment: ClusterAssignment) -> CentroidSet:
    """Per non-empty cluster, the member clip maximizing that component's
    log-density; ties go to the smallest clip index. Empty clusters are skipped."""
    ids = np.asarray(assignment.cluster_ids)
    centroids: dict[int, Centroid] = {}
    for c in range(model.n_components):
        members = np.flatnonzero(ids == c)
        if members.size == 0:
            continue
        dens = assignment.log_densities[members, c]
        best = members[int(np.argmax(dens))]
        centroids[c] = Centroid(cluster_id=c, clip_index=int(best),
                                log_density=float(assignment.log_densities[best, c]))
    return CentroidSet(by_cluster=centroids)


def annotate_oracle(centroids: CentroidSet, gt_labels: np.ndarray) -> dict[int, int]:
    """Simulated annotator: each cluster gets its centroid clip's ground-truth label."""
    gt_labels = np.asarray(gt_labels)
    labels: dict[int, int] = {}
    for centroid in centroids:
        if centroid.clip_index >= gt_labels.shape[0]:
            raise DataError(
                f"no ground truth for centroid clip {centroid.clip_index} "
                f"of cluster {centroid.cluster_id}"
            )
        labels[centroid.cluster_id] = int(gt_labels[centroid.clip_index])
    return labels


def propagate(assignment: ClusterAssignment, labels: dict[int, int],
              embeddings: EmbeddingSet, centroids: CentroidSet,
              threshold: float = math.inf) -> WeakLabelSet:
    """Copy each cluster's label to all member clips and measure the L2
    distance of every clip embedding to its centroid clip's embedding."""
    ids = np.asarray(assignment.cluster_ids)
    clips = np.asarray(embeddings.clips, dtype=np.float64)
    out_labels = np.zeros(ids.shape[0], dtype=np.int64)
    distances = np.zeros(ids.shape[0], dtype=np.float64)
    for centroid in centroids:
        c = centroid.cluster_id
        if c not in labels:
            raise StateError(f"cluster {c} is non-empty but has no label")
        members = np.flatnonzero(ids == c)
        out_labels[members] = labels[c]
        distances[members] = np.linalg.norm(
            clips[members] - clips[centroid.clip_index], axis=1
        )
    return WeakLabelSet(
        cluster_ids=ids.copy(),
        labels=out_labels,
        distances=distances,
        retained=distances <= threshold,
        annotation_budget=len(centroids),
        threshold=float(threshold),
    )


def apply_threshold(weak: WeakLabelSet, threshold: Threshold) -> WeakLabelSet:
    """Recompute retention flags for a different cut without re-propagating."""
    cut = threshold.resolve(weak.distances)
    return replace(weak, retained=weak.distances <= cut, threshold=cut)


def save_weak_labels(weak: WeakLabelSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_index", "cluster_id", "label_id", "distance", "retained"])
        for i in range(weak.n_clips):
            writer.writerow([
                i,
                int(weak.cluster_ids[i]),
                int(weak.labels[i]),
                repr(float(weak.distances[i])),
                int(weak.retained[i]),
            ])


def load_weak_labels(path, annotation_budget: int | None = None,
                     threshold: float = math.inf) -> WeakLabelSet:
    cluster_ids, labels, distances, retained = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["clip_index", "cluster_id", "label_id", "distance", "retained"]:
            raise DataError(f"{path}: unexpected weak-label header")
        for row in reader:
            if not row:
                continue
            cluster_ids.append(int(row[1]))
            labels.append(int(row[2]))
            distances.append(float(row[3]))
            retained.append(bool(int(row[4])))
    cluster_arr = np.asarray(cluster_ids, dtype=np.int64)
    if annotation_budget is None:
        annotation_budget = len(np.unique(cluster_arr))
    return WeakLabelSet(
        cluster_ids=cluster_arr,
        labels=np.asarray(labels, dtype=np.int64),
        distances=np.asarray(distances),
        retained=np.asarray(retained, dtype=bool),
        annotation_budget=annotation_budget,
        threshold=threshold,
    )


class AnnotationSession:
    """Single-writer state machine around the append-only annotation log.

    Every accepted submission is flushed to the log before the in-memory
    state changes, so replaying the log after a crash reconstructs the
    session exactly. Request ids are deterministic, which makes re-enqueueing
    after a restart idempotent.
    """

    def __init__(self, session_id: str, participant_id: str, centroids: CentroidSet,
                 clip_spans: np.ndarray, label_names: list[str], log_path,
                 cluster_sizes: dict[int, int] | None = None,
                 media_hints: dict[int, str] | None = None,
                 clock=time.time):
        self.session_id = session_id
        self.participant_id = participant_id
        self.centroids = centroids
        self.clip_spans = np.asarray(clip_spans, dtype=np.float64)
        self.label_names = list(label_names)
        self.log_path = Path(log_path)
        self.cluster_sizes = dict(cluster_sizes or {})
        self.media_hints = dict(media_hints or {})
        self._clock = clock
        self._labels: dict[int, int] = {}
        self._closed = False
        self._lock = threading.Lock()
        self._complete = threading.Event()
        if self.log_path.exists():
            self._replay()
        self._check_complete()

    # -- queries ---------------------------------------------------------

    @property
    def total_clusters(self) -> int:
        return len(self.centroids)

    @property
    def labeled_count(self) -> int:
        return len(self._labels)

    @property
    def pending_count(self) -> int:
        return self.total_clusters - self.labeled_count

    @property
    def closed(self) -> bool:
        return self._closed

    def is_complete(self) -> bool:
        return self.labeled_count == self.total_clusters

    def labels(self) -> dict[int, int]:
        return dict(self._labels)

    def request_id_for(self, cluster_id: int) -> str:
        return f"{self.session_id}-c{cluster_id:04d}"

    def _request_for(self, cluster_id: int) -> AnnotatorRequest:
        centroid = self.centroids[cluster_id]
        start_s, end_s = self.clip_spans[centroid.clip_index]
        return AnnotatorRequest(
            request_id=self.request_id_for(cluster_id),
            participant_id=self.participant_id,
            clip_index=centroid.clip_index,
            start_s=float(start_s),
            end_s=float(end_s),
            cluster_id=cluster_id,
            media_hint=self.media_hints.get(cluster_id),
        )

    def pending_requests(self) -> list[AnnotatorRequest]:
        if self._closed:
            raise StateError("session is closed")
        return [self._request_for(c) for c in self.centroids.cluster_ids()
                if c not in self._labels]

    def next_request(self) -> AnnotatorRequest | None:
        pending = self.pending_requests()
        return pending[0] if pending else None

    # -- mutation --------------------------------------------------------

    def submit(self, request_id: str, label_id: int) -> None:
        with self._lock:
            if self._closed:
                raise StateError("session is closed")
            cluster_id = self._cluster_for_request(request_id)
            if cluster_id in self._labels:
                raise StateError(f"request {request_id} was already answered")
            if not 0 <= label_id < len(self.label_names):
                raise DataError(f"label id {label_id} is outside the vocabulary")
            self._append_record(cluster_id, label_id)
            self._labels[cluster_id] = int(label_id)
            self._check_complete()

    def close(self) -> None:
        with self._lock:
            self._closed = True

    def wait_complete(self, timeout: float | None = None) -> bool:
        return self._complete.wait(timeout)

    # -- internals -------------------------------------------------------

    def _check_complete(self) -> None:
        if self.is_complete():
            self._complete.set()

    def _cluster_for_request(self, request_id: str) -> int:
        for c in self.centroids.cluster_ids():
            if self.request_id_for(c) == request_id:
                return c
        raise DataError(f"unknown request id {request_id!r}")

    def _append_record(self, cluster_id: int, label_id: int) -> None:
        record = {
            "request_id": self.request_id_for(cluster_id),
            "cluster_id": cluster_id,
            "clip_index": self.centroids[cluster_id].clip_index,
            "label_id": int(label_id),
            "timestamp": float(self._clock()),
        }
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()

    def _replay(self) -> None:
        for lineno, line in enumerate(self.log_path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{self.log_path}:{lineno}: corrupt session record") from exc
            cluster_id = int(record["cluster_id"])
            if cluster_id not in self.centroids:
                raise DataError(f"{self.log_path}:{lineno}: unknown cluster {cluster_id}")
            self._labels[cluster_id] = int(record["label_id"])


def enqueue_requests(session: AnnotationSession) -> list[AnnotatorRequest]:
    """One request per unlabeled non-empty cluster, ordered by cluster id."""
    return session.pending_requests()


def run_oracle_session(session: AnnotationSession, gt_labels: np.ndarray) -> dict[int, int]:
    """Answer every pending request with the centroid clip's ground-truth label."""
    gt_labels = np.asarray(gt_labels)
    for request in session.pending_requests():
        if request.clip_index >= gt_labels.shape[0]:
            raise DataError(f"no ground truth for clip {request.clip_index}")
        session.submit(request.request_id, int(gt_labels[request.clip_index]))
    return session.labels()


def canonical_log_bytes(path) -> bytes:
    """Session log with timestamps zeroed, for comparing annotation effort
    across oracle and interactive runs."""
    lines = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        record["timestamp"] = 0.0
        lines.append(json.dumps(record, sort_keys=True))
    return ("\n".join(lines) + "\n").encode("utf-8")
