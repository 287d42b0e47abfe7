"""Command-line entry point wiring the pipeline stages into reproducible runs.

Stages communicate exclusively through files under the output directory, so
an annotation session can span days and machines:

    models/{pid}_s{seed}.wgmm          fitted mixtures
    assignments/{pid}_s{seed}.csv      hard cluster ids per clip
    weak/{pid}_s{seed}.csv             propagated labels, distances, retention
    sessions/{pid}_s{seed}.log         append-only annotation log
    metrics/                           per-scenario results and confusions
    reports/                           sweep CSVs and the summary table
    manifest.json                      config hash, seeds, artifact checksums
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import annotate, evaluation, gmm, ingest, synth, transfer, weaktrain
from .annoserve import AnnotationServer
from .annotate import Threshold
from .config import RunConfig, load_config
from .errors import ConfigError, PipelineError, StateError
from .weaktrain import LossSpec, format_mean_std

SCENARIO_TABLE = {
    "fully-supervised": ("fully-supervised", "weighted-ce"),
    "few-shot-ce": ("few-shot", "weighted-ce"),
    "random-ce": ("random", "weighted-ce"),
    "weak-ce": ("weak", "weighted-ce"),
    "weak-gce": ("weak", "gce"),
    "weak-phgce": ("weak", "phgce"),
}


def parse_scenario(name: str) -> tuple[str, str, Threshold | None]:
    """Split a scenario id like ``weak-ce-t4`` into subset kind, loss kind and
    an optional threshold preset."""
    base = name.strip().lower()
    threshold = None
    for suffix, preset in (("-t-4", 4.0), ("-t4", 4.0), ("-t-6", 6.0), ("-t6", 6.0)):
        if base.endswith(suffix):
            threshold = Threshold("absolute", preset)
            base = base[: -len(suffix)]
            break
    if base not in SCENARIO_TABLE:
        raise ConfigError(f"unknown scenario {name!r}")
    kind, loss = SCENARIO_TABLE[base]
    return kind, loss, threshold


# -- manifest ------------------------------------------------------------


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def update_manifest(cfg: RunConfig, new_artifacts: dict[str, str]) -> None:
    path = cfg.out_dir / "manifest.json"
    manifest = {"config_hash": cfg.config_hash(),
                "seeds": list(cfg.seeds), "artifacts": {}}
    if path.exists():
        manifest = json.loads(path.read_text())
        if manifest.get("config_hash") != cfg.config_hash():
            raise ConfigError(
                "output directory was produced with a different configuration"
            )
    manifest["artifacts"].update(new_artifacts)
    manifest["artifacts"] = dict(sorted(manifest["artifacts"].items()))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _record(cfg: RunConfig, path: Path) -> tuple[str, str]:
    return str(path.relative_to(cfg.out_dir)), file_sha256(path)


# -- shared loading ------------------------------------------------------


@dataclass
class ParticipantData:
    embeddings: ingest.EmbeddingSet
    gt_clip_labels: np.ndarray
    label_track: ingest.LabelTrack
    series: ingest.SensorSeries | None = None


def load_participant(cfg: RunConfig, pid: str, need_sensors: bool = False) -> ParticipantData:
    try:
        embeddings = ingest.load_embeddings(
            cfg.embedding_path(pid), expected_dim=cfg.expected_dim,
            participant_id=pid, source_tag=cfg.embedding_tag)
        if cfg.normalize:
            embeddings = ingest.normalize_embeddings(embeddings)
        track = ingest.load_label_track(cfg.labels_path(pid),
                                        cfg.label_names_path(), participant_id=pid)
        series = None
        if need_sensors:
            series = ingest.load_sensor_series(cfg.sensors_path(pid), participant_id=pid)
    except PipelineError as exc:
        raise type(exc)(f"participant {pid}: {exc}") from exc
    gt = ingest.clip_ground_truth(track, embeddings.clip_spans)
    return ParticipantData(embeddings=embeddings, gt_clip_labels=gt,
                           label_track=track, series=series)


# -- cluster stage -------------------------------------------------------


def _cluster_one(cfg: RunConfig, pid: str, seed: int) -> dict[str, str]:
    data = load_participant(cfg, pid)
    model = gmm.fit(data.embeddings.clips, cfg.clusters, seed=seed,
                    reg=cfg.reg, max_iter=cfg.max_iter, tol=cfg.tol)
    assignment = gmm.assign(model, data.embeddings.clips)
    model_path = cfg.out_dir / "models" / f"{pid}_s{seed}.wgmm"
    assign_path = cfg.out_dir / "assignments" / f"{pid}_s{seed}.csv"
    model_path.parent.mkdir(parents=True, exist_ok=True)
    assign_path.parent.mkdir(parents=True, exist_ok=True)
    gmm.save_model(model, model_path)
    with open(assign_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_index", "cluster_id"])
        for i, cid in enumerate(assignment.cluster_ids):
            writer.writerow([i, int(cid)])
    return dict([_record(cfg, model_path), _record(cfg, assign_path)])


def cmd_cluster(cfg: RunConfig) -> None:
    cfg.validate_files()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(pid, seed) for pid in cfg.participants for seed in cfg.seeds]
    artifacts: dict[str, str] = {}
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for result in pool.map(_cluster_worker, [(cfg, pid, seed) for pid, seed in jobs]):
                artifacts.update(result)
    else:
        for pid, seed in jobs:
            artifacts.update(_cluster_one(cfg, pid, seed))
    update_manifest(cfg, artifacts)
    print(f"clustered {len(cfg.participants)} participants x {len(cfg.seeds)} seeds "
          f"-> {cfg.out_dir}")


def _cluster_worker(args):
    return _cluster_one(*args)


# -- annotate stage ------------------------------------------------------


def _load_stage(cfg: RunConfig, pid: str, seed: int):
    model_path = cfg.out_dir / "models" / f"{pid}_s{seed}.wgmm"
    if not model_path.exists():
        raise StateError(f"missing stage: cluster (no model for {pid} seed {seed})")
    data = load_participant(cfg, pid)
    model = gmm.load_model(model_path)
    assignment = gmm.assign(model, data.embeddings.clips)
    centroids = annotate.find_centroids(model, assignment)
    return data, model, assignment, centroids


def _write_weak(cfg: RunConfig, pid: str, seed: int, weak) -> dict[str, str]:
    weak_path = cfg.out_dir / "weak" / f"{pid}_s{seed}.csv"
    weak_path.parent.mkdir(parents=True, exist_ok=True)
    annotate.save_weak_labels(weak, weak_path)
    meta_path = weak_path.with_suffix(".json")
    meta_path.write_text(json.dumps({
        "participant": pid,
        "seed": seed,
        "clusters": int(cfg.clusters),
        "threshold": None if np.isinf(weak.threshold) else float(weak.threshold),
        "budget": int(weak.annotation_budget),
    }, indent=2, sort_keys=True) + "\n")
    return dict([_record(cfg, weak_path), _record(cfg, meta_path)])


def cmd_annotate(cfg: RunConfig, mode: str = "oracle", port: int | None = None,
                 assets_dir=None, ui_dir=None) -> None:
    artifacts: dict[str, str] = {}
    for pid in cfg.participants:
        for seed in cfg.seeds:
            data, model, assignment, centroids = _load_stage(cfg, pid, seed)
            sizes = {c: int(np.sum(assignment.cluster_ids == c))
                     for c in centroids.cluster_ids()}
            log_path = cfg.out_dir / "sessions" / f"{pid}_s{seed}.log"
            # oracle runs are unattended: a zeroed clock keeps logs byte-reproducible
            clock = (lambda: 0.0) if mode == "oracle" else time.time
            session = annotate.AnnotationSession(
                session_id=f"{pid}-s{seed}", participant_id=pid,
                centroids=centroids, clip_spans=data.embeddings.clip_spans,
                label_names=data.label_track.label_names, log_path=log_path,
                cluster_sizes=sizes, clock=clock,
            )
            if mode == "oracle":
                annotate.run_oracle_session(session, data.gt_clip_labels)
            else:
                server = AnnotationServer(session, port=port or cfg.port,
                                          assets_dir=assets_dir or cfg.assets_dir,
                                          ui_dir=ui_dir)
                server.start()
                print(f"serving {pid} seed {seed} on {server.base_url} "
                      f"({session.pending_count} clusters pending)")
                try:
                    server.serve_until_complete()
                finally:
                    server.stop()
            labels = session.labels()
            weak = annotate.propagate(assignment, labels, data.embeddings, centroids)
            weak = annotate.apply_threshold(weak, cfg.threshold)
            artifacts.update(_write_weak(cfg, pid, seed, weak))
            if mode == "oracle":
                artifacts.update([_record(cfg, log_path)])
    update_manifest(cfg, artifacts)
    print(f"annotated ({mode}) -> {cfg.out_dir / 'weak'}")


# -- train stage ---------------------------------------------------------


def run_participant_scenarios(cfg: RunConfig, pid: str, seed: int) -> list[dict]:
    """Train and evaluate every configured scenario for one participant/seed."""
    weak_path = cfg.out_dir / "weak" / f"{pid}_s{seed}.csv"
    if not weak_path.exists():
        raise StateError(f"missing stage: annotate (no weak labels for {pid} seed {seed})")
    data = load_participant(cfg, pid, need_sensors=True)
    model_path = cfg.out_dir / "models" / f"{pid}_s{seed}.wgmm"
    model = gmm.load_model(model_path)
    assignment = gmm.assign(model, data.embeddings.clips)
    centroids = annotate.find_centroids(model, assignment)
    weak_raw = annotate.load_weak_labels(weak_path)

    n_classes = data.label_track.n_classes
    train_series, test_series = transfer.split_series(data.series, cfg.train_fraction)
    gt_train = transfer.ground_truth_to_timesteps(data.label_track, train_series)
    gt_test = transfer.ground_truth_to_timesteps(data.label_track, test_series)
    full_train = transfer.make_windows(train_series, gt_train, cfg.train_window,
                                       n_classes, "fully-supervised")
    test_set = transfer.make_windows(test_series, gt_test, cfg.train_window,
                                     n_classes, "test")

    weak_train_cache: dict[str, transfer.LabeledWindowSet] = {}

    def weak_windows(threshold: Threshold | None):
        key = "default" if threshold is None else threshold.label()
        if key not in weak_train_cache:
            weak_set = weak_raw if threshold is None else annotate.apply_threshold(
                weak_raw, threshold)
            track = transfer.labels_to_timesteps(weak_set, data.embeddings.clip_spans,
                                                 train_series)
            weak_train_cache[key] = transfer.make_windows(
                train_series, track, cfg.train_window, n_classes, "weak")
        return weak_train_cache[key]

    results = []
    for scenario in cfg.scenarios:
        kind, loss_kind, threshold = parse_scenario(scenario)
        window_set = transfer.build_scenario(
            kind, full_train, weak_windows(threshold), centroids.clip_indices(),
            data.embeddings.clip_spans, rng_seed=seed)
        train_cfg = weaktrain.TrainConfig(
            epochs=cfg.train.epochs, learning_rate=cfg.train.learning_rate,
            weight_decay=cfg.train.weight_decay, lr_decay=cfg.train.lr_decay,
            lr_decay_every=cfg.train.lr_decay_every, batch_size=cfg.train.batch_size,
            hidden_units=cfg.train.hidden_units, seed=seed)
        loss = LossSpec(loss_kind, class_weights=window_set.window_weights,
                        q=cfg.gce_q, tau=cfg.phgce_tau)
        classifier = weaktrain.train(window_set, train_cfg, loss)
        result = weaktrain.evaluate(classifier, test_set)
        results.append({
            "scenario": scenario,
            "clusters": cfg.clusters,
            "threshold": threshold.label() if threshold else cfg.threshold.label(),
            "seed": seed,
            "participant": pid,
            "accuracy": result.accuracy,
            "macro_f1": result.macro_f1,
            "confusion": result.confusion,
            "budget": weak_raw.annotation_budget,
            "window_counts": np.bincount(window_set.window_labels,
                                         minlength=n_classes),
        })
    return results


def _train_worker(args):
    cfg, pid, seed = args
    return run_participant_scenarios(cfg, pid, seed)


def cmd_train(cfg: RunConfig) -> None:
    cfg.validate_files(need_sensors=True)
    metrics_dir = cfg.out_dir / "metrics"
    metrics_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, pid, seed) for pid in cfg.participants for seed in cfg.seeds]
    all_rows: list[dict] = []
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for rows in pool.map(_train_worker, jobs):
                all_rows.extend(rows)
    else:
        for job in jobs:
            all_rows.extend(_train_worker(job))

    artifacts: dict[str, str] = {}
    metrics_path = metrics_dir / "scenario_metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "C", "threshold", "seed",
                         "participant", "accuracy", "macro_f1"])
        for row in all_rows:
            writer.writerow([row["scenario"], row["clusters"], row["threshold"],
                             row["seed"], row["participant"],
                             f"{row['accuracy']:.6f}", f"{row['macro_f1']:.6f}"])
    artifacts.update([_record(cfg, metrics_path)])

    manifests = []
    for scenario in cfg.scenarios:
        rows = [r for r in all_rows if r["scenario"] == scenario]
        confusion = np.sum([r["confusion"] for r in rows], axis=0)
        conf_path = metrics_dir / f"confusion_{scenario}.csv"
        np.savetxt(conf_path, confusion, fmt="%d", delimiter=",")
        artifacts.update([_record(cfg, conf_path)])
        manifests.append({
            "scenario": scenario,
            "threshold": rows[0]["threshold"],
            "budget": int(np.mean([r["budget"] for r in rows])),
            "window_counts": {str(i): int(c) for i, c in
                              enumerate(np.sum([r["window_counts"] for r in rows], axis=0))},
        })
    manifest_path = metrics_dir / "scenario_manifests.json"
    manifest_path.write_text(json.dumps(manifests, indent=2, sort_keys=True) + "\n")
    artifacts.update([_record(cfg, manifest_path)])
    update_manifest(cfg, artifacts)
    print(f"trained {len(cfg.scenarios)} scenarios -> {metrics_path}")


# -- report stage --------------------------------------------------------


def cmd_report(cfg: RunConfig) -> None:
    cfg.validate_files()
    reports_dir = cfg.out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    embeddings, gt = {}, {}
    for pid in cfg.participants:
        data = load_participant(cfg, pid)
        embeddings[pid] = data.embeddings
        gt[pid] = data.gt_clip_labels

    cluster_report = evaluation.sweep_clusters(
        embeddings, gt, cfg.sweep_clusters, cfg.seeds,
        reg=cfg.reg, max_iter=cfg.max_iter, tol=cfg.tol)
    thresholds = [Threshold.parse(t) for t in cfg.sweep_thresholds]
    threshold_report = evaluation.sweep_thresholds(
        embeddings, gt, cfg.clusters, thresholds, cfg.seeds,
        reg=cfg.reg, max_iter=cfg.max_iter, tol=cfg.tol)

    artifacts: dict[str, str] = {}
    clusters_csv = reports_dir / "sweep_clusters.csv"
    thresholds_csv = reports_dir / "sweep_thresholds.csv"
    cluster_report.to_csv(clusters_csv)
    threshold_report.to_csv(thresholds_csv)
    artifacts.update([_record(cfg, clusters_csv), _record(cfg, thresholds_csv)])

    summary = ["== labelling accuracy by cluster count ==",
               cluster_report.summary_text(),
               "== labelling accuracy by distance threshold ==",
               threshold_report.summary_text()]

    metrics_path = cfg.out_dir / "metrics" / "scenario_metrics.csv"
    if cfg.scenarios:
        if not metrics_path.exists():
            raise StateError("missing stage: train (run `weakanno train` first, "
                             "or clear [training] scenarios)")
        summary.append("== scenario results ==")
        summary.append(_scenario_summary(metrics_path))
    summary_path = reports_dir / "summary.txt"
    summary_path.write_text("\n".join(summary))
    artifacts.update([_record(cfg, summary_path)])
    update_manifest(cfg, artifacts)
    print(f"reports -> {reports_dir}")


def _scenario_summary(metrics_path: Path) -> str:
    rows = []
    with open(metrics_path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    scenarios = []
    for row in rows:
        if row["scenario"] not in scenarios:
            scenarios.append(row["scenario"])
    lines = [f"{'scenario':>20}  {'accuracy':<18}  {'macro F1':<18}"]
    for scenario in scenarios:
        acc = [100 * float(r["accuracy"]) for r in rows if r["scenario"] == scenario]
        f1 = [100 * float(r["macro_f1"]) for r in rows if r["scenario"] == scenario]
        lines.append(f"{scenario:>20}  "
                     f"{format_mean_std(float(np.mean(acc)), evaluation.sample_std(acc)):<18}  "
                     f"{format_mean_std(float(np.mean(f1)), evaluation.sample_std(f1)):<18}")
    return "\n".join(lines) + "\n"


# -- synth stage ---------------------------------------------------------


def cmd_synth(suite_name: str, out_dir, n_participants: int, seed: int,
              duration_s: float | None = None, n_clips: int | None = None) -> None:
    if suite_name == "cluster":
        suite = synth.cluster_suite(n_participants=n_participants, seed=seed,
                                    **({"n_clips": n_clips} if n_clips else {}))
    elif suite_name == "overlap":
        suite = synth.overlap_suite(n_participants=n_participants, seed=seed,
                                    **({"n_clips": n_clips} if n_clips else {}))
    elif suite_name == "sensor":
        suite = synth.sensor_suite(n_participants=n_participants, seed=seed,
                                   **({"duration_s": duration_s} if duration_s else {}))
    else:
        raise ConfigError(f"unknown suite {suite_name!r}")
    synth.write_suite(suite, out_dir)
    print(f"wrote {suite_name} suite ({len(suite)} participants) -> {out_dir}")


# -- entry point ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weakanno",
        description="weak-annotation pipeline: cluster, annotate, train, report")
    parser.add_argument("--config", type=Path, help="INI run configuration")
    parser.add_argument("--seed-list", help="comma-separated seed override")
    parser.add_argument("--jobs", type=int, help="participant-level parallelism")
    parser.add_argument("--print-config", action="store_true",
                        help="dump the effective configuration and exit")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("cluster", help="fit and persist per-participant mixtures")
    p_annotate = sub.add_parser("annotate", help="label centroid clips")
    p_annotate.add_argument("--mode", choices=["oracle", "serve"], default="oracle")
    p_annotate.add_argument("--port", type=int)
    p_annotate.add_argument("--assets", type=Path, help="static media directory")
    p_annotate.add_argument("--ui", type=Path, help="static frontend bundle directory")
    sub.add_parser("train", help="train classifiers for every scenario")
    sub.add_parser("report", help="emit sweep CSVs and summary tables")
    p_synth = sub.add_parser("synth", help="generate a synthetic benchmark suite")
    p_synth.add_argument("--suite", choices=["cluster", "overlap", "sensor"],
                         default="sensor")
    p_synth.add_argument("--out", type=Path, required=True)
    p_synth.add_argument("--participants", type=int, default=5)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--duration", type=float, help="sensor suite length in seconds")
    p_synth.add_argument("--clips", type=int, help="embedding suite clip count")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            cmd_synth(args.suite, args.out, args.participants, args.seed,
                      duration_s=args.duration, n_clips=args.clips)
            return 0
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed_list:
            cfg.seeds = [int(s) for s in args.seed_list.split(",") if s.strip()]
        if args.jobs:
            cfg.jobs = args.jobs
        if args.print_config:
            print(cfg.effective_text(), end="")
            return 0
        if args.command == "cluster":
            cmd_cluster(cfg)
        elif args.command == "annotate":
            cmd_annotate(cfg, mode=args.mode, port=args.port,
                         assets_dir=args.assets, ui_dir=args.ui)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "report":
            cmd_report(cfg)
        else:
            parser.print_help()
            return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
