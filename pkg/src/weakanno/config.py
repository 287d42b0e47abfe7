"""Run configuration: a single INI-style file drives every pipeline stage."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

from .annotate import Threshold
from .errors import ConfigError
from .ingest import WindowingSpec
from .weaktrain import TrainConfig

DEFAULT_SEEDS = [1, 2, 3]

DEFAULT_SCENARIOS = ["fully-supervised", "few-shot-ce", "random-ce",
                     "weak-ce", "weak-phgce"]


@dataclass
class RunConfig:
    root: Path = Path("data")
    participants: list[str] = field(default_factory=list)
    embedding_tag: str = "synth"
    expected_dim: int | None = None
    normalize: bool = False
    clip_window: WindowingSpec = field(default_factory=lambda: WindowingSpec(4.0, 1.0))

    clusters: int = 30
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    reg: float = 1e-6
    max_iter: int = 200
    tol: float = 1e-4

    threshold: Threshold = Threshold("none")
    port: int = 8787
    assets_dir: Path | None = None

    scenarios: list[str] = field(default_factory=lambda: list(DEFAULT_SCENARIOS))
    train_window: WindowingSpec = field(default_factory=lambda: WindowingSpec(1.0, 0.5))
    train: TrainConfig = field(default_factory=TrainConfig)
    gce_q: float = 0.7
    phgce_tau: float = 10.0
    train_fraction: float = 0.7

    sweep_clusters: list[int] = field(default_factory=lambda: [10, 30, 60])
    sweep_thresholds: list[str] = field(default_factory=lambda: ["inf", "6xmedian", "4xmedian"])

    out_dir: Path = Path("out")
    jobs: int = 1

    def participant_dir(self, participant_id: str) -> Path:
        return self.root / participant_id

    def embedding_path(self, participant_id: str) -> Path:
        base = self.participant_dir(participant_id) / f"embeddings_{self.embedding_tag}"
        wemb = base.with_suffix(".wemb")
        return wemb if wemb.exists() else base.with_suffix(".csv")

    def labels_path(self, participant_id: str) -> Path:
        return self.participant_dir(participant_id) / "labels.csv"

    def sensors_path(self, participant_id: str) -> Path:
        return self.participant_dir(participant_id) / "sensors.csv"

    def label_names_path(self) -> Path:
        return self.root / "labels.txt"

    def validate_files(self, need_sensors: bool = False) -> None:
        if not self.participants:
            raise ConfigError("participant list is empty")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        missing = []
        if not self.label_names_path().exists():
            missing.append(str(self.label_names_path()))
        for pid in self.participants:
            if not self.embedding_path(pid).exists():
                missing.append(f"{self.embedding_path(pid)} (participant {pid})")
            if not self.labels_path(pid).exists():
                missing.append(f"{self.labels_path(pid)} (participant {pid})")
            if need_sensors and not self.sensors_path(pid).exists():
                missing.append(f"{self.sensors_path(pid)} (participant {pid})")
        if missing:
            raise ConfigError("missing input files:\n  " + "\n  ".join(missing))

    def effective_text(self) -> str:
        """Canonical INI dump of every effective value."""
        parser = configparser.ConfigParser()
        parser["data"] = {
            "root": str(self.root),
            "participants": ", ".join(self.participants),
            "embedding_tag": self.embedding_tag,
            "expected_dim": "" if self.expected_dim is None else str(self.expected_dim),
            "normalize": str(self.normalize).lower(),
            "clip_length_s": repr(self.clip_window.length_s),
            "clip_stride_s": repr(self.clip_window.stride_s),
        }
        parser["clustering"] = {
            "clusters": str(self.clusters),
            "seeds": ", ".join(str(s) for s in self.seeds),
            "reg": repr(self.reg),
            "max_iter": str(self.max_iter),
            "tol": repr(self.tol),
        }
        parser["annotation"] = {
            "threshold": self.threshold.label(),
            "port": str(self.port),
            "assets_dir": "" if self.assets_dir is None else str(self.assets_dir),
        }
        parser["training"] = {
            "scenarios": ", ".join(self.scenarios),
            "window_length_s": repr(self.train_window.length_s),
            "window_stride_s": repr(self.train_window.stride_s),
            "epochs": str(self.train.epochs),
            "learning_rate": repr(self.train.learning_rate),
            "weight_decay": repr(self.train.weight_decay),
            "lr_decay": repr(self.train.lr_decay),
            "lr_decay_every": str(self.train.lr_decay_every),
            "batch_size": str(self.train.batch_size),
            "hidden_units": str(self.train.hidden_units),
            "gce_q": repr(self.gce_q),
            "phgce_tau": repr(self.phgce_tau),
            "train_fraction": repr(self.train_fraction),
        }
        parser["report"] = {
            "sweep_clusters": ", ".join(str(c) for c in self.sweep_clusters),
            "sweep_thresholds": ", ".join(self.sweep_thresholds),
        }
        parser["output"] = {"dir": str(self.out_dir), "jobs": str(self.jobs)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.effective_text().encode("utf-8")).hexdigest()


def _split_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path} not found")
    cfg = RunConfig()
    try:
        if parser.has_section("data"):
            sec = parser["data"]
            cfg.root = Path(sec.get("root", str(cfg.root)))
            cfg.participants = _split_list(sec.get("participants", ""))
            cfg.embedding_tag = sec.get("embedding_tag", cfg.embedding_tag)
            dim_text = sec.get("expected_dim", "")
            cfg.expected_dim = int(dim_text) if dim_text else None
            cfg.normalize = sec.getboolean("normalize", cfg.normalize)
            cfg.clip_window = WindowingSpec(
                sec.getfloat("clip_length_s", cfg.clip_window.length_s),
                sec.getfloat("clip_stride_s", cfg.clip_window.stride_s),
            )
        if parser.has_section("clustering"):
            sec = parser["clustering"]
            cfg.clusters = sec.getint("clusters", cfg.clusters)
            if sec.get("seeds", ""):
                cfg.seeds = [int(s) for s in _split_list(sec["seeds"])]
            cfg.reg = sec.getfloat("reg", cfg.reg)
            cfg.max_iter = sec.getint("max_iter", cfg.max_iter)
            cfg.tol = sec.getfloat("tol", cfg.tol)
        if parser.has_section("annotation"):
            sec = parser["annotation"]
            cfg.threshold = Threshold.parse(sec.get("threshold", "inf"))
            cfg.port = sec.getint("port", cfg.port)
            assets = sec.get("assets_dir", "")
            cfg.assets_dir = Path(assets) if assets else None
        if parser.has_section("training"):
            sec = parser["training"]
            if sec.get("scenarios", ""):
                cfg.scenarios = _split_list(sec["scenarios"])
            cfg.train_window = WindowingSpec(
                sec.getfloat("window_length_s", cfg.train_window.length_s),
                sec.getfloat("window_stride_s", cfg.train_window.stride_s),
            )
            cfg.train = TrainConfig(
                epochs=sec.getint("epochs", cfg.train.epochs),
                learning_rate=sec.getfloat("learning_rate", cfg.train.learning_rate),
                weight_decay=sec.getfloat("weight_decay", cfg.train.weight_decay),
                lr_decay=sec.getfloat("lr_decay", cfg.train.lr_decay),
                lr_decay_every=sec.getint("lr_decay_every", cfg.train.lr_decay_every),
                batch_size=sec.getint("batch_size", cfg.train.batch_size),
                hidden_units=sec.getint("hidden_units", cfg.train.hidden_units),
            )
            cfg.gce_q = sec.getfloat("gce_q", cfg.gce_q)
            cfg.phgce_tau = sec.getfloat("phgce_tau", cfg.phgce_tau)
            cfg.train_fraction = sec.getfloat("train_fraction", cfg.train_fraction)
        if parser.has_section("report"):
            sec = parser["report"]
            if sec.get("sweep_clusters", ""):
                cfg.sweep_clusters = [int(c) for c in _split_list(sec["sweep_clusters"])]
            if sec.get("sweep_thresholds", ""):
                cfg.sweep_thresholds = _split_list(sec["sweep_thresholds"])
        if parser.has_section("output"):
            sec = parser["output"]
            cfg.out_dir = Path(sec.get("dir", str(cfg.out_dir)))
            cfg.jobs = sec.getint("jobs", cfg.jobs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg
