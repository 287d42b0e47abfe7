import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakanno import ingest
from weakanno.errors import (
    AlignmentError,
    ConfigError,
    DataError,
    EmptyDataError,
    FormatError,
    ShapeError,
)
from weakanno.ingest import (
    EmbeddingSet,
    LabelTrack,
    SensorSeries,
    WindowingSpec,
    clip_ground_truth,
    concat_embeddings,
    load_embeddings,
    load_label_track,
    load_sensor_series,
    normalize_embeddings,
    pool_frames,
    save_embeddings,
    save_embeddings_csv,
    save_label_track,
    save_sensor_series,
)


def make_set(n_clips=3, dim=2, participant="p01", tag="clip", dtype=np.float32):
    rng = np.random.default_rng(42)
    clips = rng.normal(size=(n_clips, dim)).astype(dtype)
    starts = np.arange(n_clips, dtype=np.float32)
    spans = np.stack([starts, starts + 4.0], axis=1)
    return EmbeddingSet(participant, clips, spans, tag)


class TestBinaryFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        original = make_set(n_clips=7, dim=5)
        path = tmp_path / "emb.wemb"
        save_embeddings(original, path)
        loaded = load_embeddings(path, participant_id="p01", source_tag="clip")
        assert loaded.clips.dtype == np.float32
        assert loaded.clips.tobytes() == original.clips.astype("<f4").tobytes()
        assert np.asarray(loaded.clip_spans, dtype="<f4").tobytes() == \
            original.clip_spans.astype("<f4").tobytes()

    def test_header_decode(self, tmp_path):
        path = tmp_path / "emb.wemb"
        payload = b"WEMB" + struct.pack("<III", 1, 3, 2) + \
            np.arange(6, dtype="<f4").tobytes()
        path.write_bytes(payload)
        loaded = load_embeddings(path)
        assert loaded.n_clips == 3 and loaded.dim == 2
        assert np.allclose(loaded.clips, np.arange(6).reshape(3, 2))

    def test_truncated_matrix(self, tmp_path):
        path = tmp_path / "emb.wemb"
        path.write_bytes(b"WEMB" + struct.pack("<III", 1, 3, 2)
                         + np.arange(5, dtype="<f4").tobytes())
        with pytest.raises(FormatError, match="truncated"):
            load_embeddings(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "emb.wemb"
        path.write_bytes(b"XEMB" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_embeddings(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "emb.wemb"
        path.write_bytes(b"WEMB" + struct.pack("<III", 9, 1, 1) + b"\x00" * 4)
        with pytest.raises(FormatError, match="version"):
            load_embeddings(path)

    def test_clip_dim_matches_header(self, tmp_path):
        # vision-language embeddings arrive at dim 768
        original = make_set(n_clips=4, dim=768, tag="clip")
        path = tmp_path / "emb.wemb"
        save_embeddings(original, path)
        loaded = load_embeddings(path, expected_dim=768, source_tag="clip")
        assert loaded.dim == 768

    def test_expected_dim_mismatch(self, tmp_path):
        path = tmp_path / "emb.wemb"
        save_embeddings(make_set(dim=3), path)
        with pytest.raises(ShapeError):
            load_embeddings(path, expected_dim=4)

    def test_non_finite_entry_named(self, tmp_path):
        path = tmp_path / "emb.wemb"
        clips = np.ones((2, 2), dtype="<f4")
        clips[1, 0] = np.nan
        path.write_bytes(b"WEMB" + struct.pack("<III", 1, 2, 2) + clips.tobytes())
        with pytest.raises(DataError, match="row 1, column 0"):
            load_embeddings(path)

    def test_missing_span_block_synthesizes_spans(self, tmp_path):
        path = tmp_path / "emb.wemb"
        path.write_bytes(b"WEMB" + struct.pack("<III", 1, 2, 2)
                         + np.ones(4, dtype="<f4").tobytes())
        loaded = load_embeddings(path)
        assert np.allclose(loaded.clip_spans, [[0, 1], [1, 2]])


class TestCsvFormat:
    def test_round_trip(self, tmp_path):
        original = make_set(n_clips=4, dim=3, dtype=np.float64)
        path = tmp_path / "emb.csv"
        save_embeddings_csv(original, path)
        loaded = load_embeddings(path, participant_id="p01", source_tag="clip")
        assert np.array_equal(loaded.clips, original.clips)
        assert np.array_equal(loaded.clip_spans, original.clip_spans)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("start_s,end_s,g0\n0,4,1\n")
        with pytest.raises(FormatError, match="f0"):
            load_embeddings(path)


class TestEmbeddingSetInvariants:
    def test_spans_must_increase(self):
        clips = np.ones((2, 2))
        with pytest.raises(DataError):
            EmbeddingSet("p", clips, [[1.0, 5.0], [1.0, 5.0]])

    def test_uniform_duration(self):
        clips = np.ones((2, 2))
        with pytest.raises(DataError):
            EmbeddingSet("p", clips, [[0.0, 4.0], [1.0, 6.0]])

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            EmbeddingSet("p", np.ones((0, 2)), np.ones((0, 2)))


class TestPoolFrames:
    def test_window_count_example(self):
        frames = np.ones((300, 2))
        pooled = pool_frames(frames, WindowingSpec(4.0, 1.0), fps=30)
        assert pooled.n_clips == 7

    def test_constant_frames(self):
        v = np.array([1.5, -2.0, 3.0])
        frames = np.tile(v, (200, 1))
        pooled = pool_frames(frames, WindowingSpec(4.0, 1.0), fps=30)
        assert np.allclose(pooled.clips, v)

    def test_one_hot_mean(self):
        # 120 one-hot rows: the first 4 s clip averages to 1/120 per coordinate
        frames = np.eye(120)
        pooled = pool_frames(frames, WindowingSpec(4.0, 1.0), fps=30)
        expected = np.full(120, 1.0 / 120.0)
        assert np.allclose(pooled.clips[0], expected)

    def test_too_few_frames(self):
        with pytest.raises(EmptyDataError):
            pool_frames(np.ones((100, 2)), WindowingSpec(4.0, 1.0), fps=30)

    @settings(deadline=None, max_examples=60)
    @given(
        n_frames=st.integers(30, 600),
        fps=st.integers(5, 60),
        length=st.integers(1, 8),
        stride=st.integers(1, 8),
    )
    def test_window_count_closed_form(self, n_frames, fps, length, stride):
        stride = min(stride, length)
        window = length * fps
        if n_frames < window:
            return
        pooled = pool_frames(np.ones((n_frames, 2)),
                             WindowingSpec(float(length), float(stride)), fps=fps)
        assert pooled.n_clips == math.floor((n_frames - window) / (stride * fps)) + 1


class TestConcat:
    def test_dims_add(self):
        a = make_set(n_clips=3, dim=768, tag="clip")
        b = make_set(n_clips=3, dim=1024, tag="flow")
        merged = concat_embeddings(a, b)
        assert merged.dim == 1792
        assert merged.source_tag == "clip+flow"

    def test_rows_concatenate(self):
        a = EmbeddingSet("p", [[1.0, 2.0]], [[0.0, 4.0]], "a")
        b = EmbeddingSet("p", [[3.0]], [[0.0, 4.0]], "b")
        merged = concat_embeddings(a, b)
        assert np.array_equal(merged.clips, [[1.0, 2.0, 3.0]])

    def test_mismatched_counts(self):
        a = make_set(n_clips=10)
        b = make_set(n_clips=9)
        with pytest.raises(AlignmentError):
            concat_embeddings(a, b)

    def test_concat_slice_recovers(self):
        a = make_set(n_clips=5, dim=3, tag="a")
        b = make_set(n_clips=5, dim=4, tag="b")
        merged = concat_embeddings(a, b)
        assert np.array_equal(merged.clips[:, :3], a.clips)
        assert np.array_equal(merged.clips[:, 3:], b.clips)


class TestClipGroundTruth:
    def make_track(self, timestamps, labels, n_classes=8):
        return LabelTrack("p", np.asarray(timestamps, dtype=float),
                          np.asarray(labels), [f"l{i}" for i in range(n_classes)])

    def test_majority(self):
        track = self.make_track(np.arange(10) * 0.4, [3] * 7 + [1] * 3)
        labels = clip_ground_truth(track, np.array([[0.0, 4.0]]))
        assert labels[0] == 3

    def test_tie_smallest_id(self):
        track = self.make_track([0.0, 1.0, 2.0, 3.0], [5, 2, 5, 2])
        labels = clip_ground_truth(track, np.array([[0.0, 4.0]]))
        assert labels[0] == 2

    def test_uncovered_span_null(self):
        track = self.make_track([0.0, 1.0], [3, 3])
        labels = clip_ground_truth(track, np.array([[10.0, 14.0]]))
        assert labels[0] == 0

    def test_empty_track(self):
        track = self.make_track([], [])
        with pytest.raises(DataError):
            clip_ground_truth(track, np.array([[0.0, 4.0]]))

    def test_label_permutation_within_span(self):
        rng = np.random.default_rng(3)
        timestamps = np.arange(20) * 0.2
        labels = rng.integers(0, 4, size=20)
        track = self.make_track(timestamps, labels, n_classes=4)
        spans = np.array([[0.0, 4.0]])
        baseline = clip_ground_truth(track, spans)
        for _ in range(5):
            shuffled = self.make_track(timestamps, rng.permutation(labels), n_classes=4)
            assert clip_ground_truth(shuffled, spans) == pytest.approx(baseline)


class TestSensorAndTrackIO:
    def test_sensor_round_trip(self, tmp_path):
        series = SensorSeries("p", 50.0, np.random.default_rng(0).normal(size=(100, 3)),
                              np.arange(100) / 50.0)
        path = tmp_path / "sensors.csv"
        save_sensor_series(series, path)
        loaded = load_sensor_series(path, participant_id="p")
        assert np.array_equal(loaded.channels, series.channels)
        assert loaded.rate_hz == pytest.approx(50.0)

    def test_rate_mismatch(self):
        with pytest.raises(DataError, match="rate"):
            SensorSeries("p", 100.0, np.zeros((50, 1)), np.arange(50) / 50.0)

    def test_track_round_trip(self, tmp_path):
        track = LabelTrack("p", np.arange(5) / 5.0, [0, 1, 2, 1, 0],
                           ["null", "a", "b"])
        save_label_track(track, tmp_path / "labels.csv", tmp_path / "labels.txt")
        loaded = load_label_track(tmp_path / "labels.csv", tmp_path / "labels.txt",
                                  participant_id="p")
        assert np.array_equal(loaded.label_ids, track.label_ids)
        assert loaded.label_names == ["null", "a", "b"]

    def test_track_requires_vocabulary(self):
        with pytest.raises(DataError):
            LabelTrack("p", [0.0], [0], ["only-null"])

    def test_track_monotone_timestamps(self):
        with pytest.raises(DataError):
            LabelTrack("p", [0.0, 0.0], [0, 1], ["null", "a"])


class TestMisc:
    def test_windowing_spec_invalid(self):
        with pytest.raises(ConfigError):
            WindowingSpec(1.0, 2.0)
        with pytest.raises(ConfigError):
            WindowingSpec(1.0, 0.0)

    def test_normalize(self):
        emb = make_set(n_clips=4, dim=3, dtype=np.float64)
        unit = normalize_embeddings(emb)
        assert np.allclose(np.linalg.norm(unit.clips, axis=1), 1.0)
