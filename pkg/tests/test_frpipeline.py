"""Recognizer pipeline tests.

The alignment oracle is a per-pixel loop reimplementation of the similarity
resample; identification oracles are hand-placed vectors at known cosine
distances. Stream tests drive real rendered frames through the full pipeline.
"""

import csv
from types import SimpleNamespace

import numpy as np
import pytest

import mascara.frpipeline as fr
import mascara.synthface as sf
from mascara.embedder import TARGET_SPEC, build_model, embed
from mascara.imaging import bilinear_sample

STILL = sf.CameraProfile(id="still", scale_range=(1.0, 1.0))


def _frame_with(bbox, points=None, size=64):
    points = points or {
        "left_eye": (24.0, 26.0), "right_eye": (40.0, 26.0), "nose_tip": (32.0, 36.0),
        "mouth_left": (27.0, 46.0), "mouth_right": (37.0, 46.0),
    }
    lm = sf.FaceLandmarks(points=points, bbox=bbox)
    return sf.Frame(image=np.full((size, size, 3), 0.5), bbox=bbox, landmarks=lm,
                    index=0, camera_id="cam_t")


@pytest.fixture(scope="module")
def target_model():
    return build_model(TARGET_SPEC)


@pytest.fixture(scope="module")
def frontal_frame():
    stream = sf.synth_stream(sf.identity_from_seed(3), STILL, 1, seed=5)
    return stream.frames[0]


class TestDetect:
    def test_min_size_boundary(self):
        assert fr.detect(_frame_with((10.0, 10.0, 24.0, 24.0))).accepted is False
        assert fr.detect(_frame_with((10.0, 10.0, 25.0, 25.0))).accepted is True

    def test_no_face_metadata(self):
        frame = SimpleNamespace(image=np.zeros((32, 32, 3)), landmarks=None)
        assert fr.detect(frame) is None

    def test_returns_ground_truth(self, frontal_frame):
        det = fr.detect(frontal_frame)
        assert det.accepted
        assert det.bbox == tuple(frontal_frame.bbox)
        assert det.landmarks is frontal_frame.landmarks


class TestAlign:
    def test_canonical_face_equals_plain_resize(self):
        rng = np.random.default_rng(0)
        src_size, out_size = 64, 48
        image = rng.uniform(size=(src_size, src_size, 3))
        # landmarks sit exactly at the canonical fractions of the source
        # frame, so the solved transform must be a pure uniform rescale
        fx_l, fy = fr.CANONICAL_POINTS["left_eye"]
        fx_r, _ = fr.CANONICAL_POINTS["right_eye"]
        mx, my = fr.CANONICAL_POINTS["mouth_center"]
        points = {
            "left_eye": (fx_l * src_size, fy * src_size),
            "right_eye": (fx_r * src_size, fy * src_size),
            "nose_tip": (mx * src_size, 0.55 * src_size),
            "mouth_left": (mx * src_size - 4.0, my * src_size),
            "mouth_right": (mx * src_size + 4.0, my * src_size),
        }
        lm = sf.FaceLandmarks(points=points, bbox=(0.0, 0.0, 63.0, 63.0))
        det = fr.DetectionResult(bbox=lm.bbox, landmarks=lm, accepted=True)
        aligned = fr.align(image, det, out_size)

        scale = src_size / out_size
        expected = np.empty((out_size, out_size, 3))
        for oy in range(out_size):
            for ox in range(out_size):
                sx, sy = ox * scale, oy * scale
                x0, y0 = int(sx), int(sy)
                x1, y1 = min(x0 + 1, src_size - 1), min(y0 + 1, src_size - 1)
                wx, wy = sx - x0, sy - y0
                top = image[y0, x0] * (1 - wx) + image[y0, x1] * wx
                bot = image[y1, x0] * (1 - wx) + image[y1, x1] * wx
                expected[oy, ox] = top * (1 - wy) + bot * wy

        assert np.abs(aligned - expected).max() < 1e-6

    def test_deterministic(self, frontal_frame):
        det = fr.detect(frontal_frame)
        a = fr.align(frontal_frame, det, (112, 112))
        b = fr.align(frontal_frame, det, (112, 112))
        assert a.tobytes() == b.tobytes()

    def test_rejects_degenerate_landmarks(self):
        points = {k: (20.0, 20.0) for k in
                  ("left_eye", "right_eye", "nose_tip", "mouth_left", "mouth_right")}
        frame = _frame_with((0.0, 0.0, 40.0, 40.0), points=points)
        with pytest.raises(ValueError):
            fr.align(frame, fr.detect(frame), 112)

    def test_rejects_unaccepted_detection(self):
        frame = _frame_with((10.0, 10.0, 20.0, 20.0))
        with pytest.raises(ValueError):
            fr.align(frame, fr.detect(frame), 112)

    def test_alignment_beats_naive_crop_under_roll(self, target_model, frontal_frame):
        def naive_crop(frame, out=112):
            x0, y0, x1, y1 = frame.bbox
            cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
            half = max(x1 - x0, y1 - y0) / 2
            gx, gy = np.meshgrid(np.linspace(cx - half, cx + half, out),
                                 np.linspace(cy - half, cy + half, out))
            return bilinear_sample(frame.image, gy, gx)

        ident = sf.identity_from_seed(3)
        ref_aligned = embed(target_model,
                            fr.align(frontal_frame, fr.detect(frontal_frame), 112))
        ref_crop = embed(target_model, naive_crop(frontal_frame))

        rng = np.random.default_rng(9)
        for _ in range(10):
            cap = sf.CaptureParams(roll_deg=float(rng.uniform(8.0, 20.0) * rng.choice([-1, 1])))
            img, lm = sf.render_identity(ident, cap)
            frame = sf.Frame(image=img, bbox=lm.bbox, landmarks=lm, index=0,
                             camera_id="cam_t")
            d_aligned = fr.cosine_distance(
                embed(target_model, fr.align(frame, fr.detect(frame), 112)), ref_aligned)
            d_crop = fr.cosine_distance(embed(target_model, naive_crop(frame)), ref_crop)
            assert d_aligned < d_crop


class TestCosineDistance:
    def test_fixed_points(self):
        u = np.array([1.0, 0.0, 0.0])
        assert fr.cosine_distance(u, u) == 0.0
        assert fr.cosine_distance(u, [0.0, 1.0, 0.0]) == 1.0
        assert fr.cosine_distance(u, -u) == 2.0

    def test_scale_invariant(self):
        rng = np.random.default_rng(1)
        u, v = rng.normal(size=8), rng.normal(size=8)
        assert fr.cosine_distance(3.0 * u, v) == pytest.approx(fr.cosine_distance(u, v))
        assert fr.cosine_distance(u, 0.25 * v) == pytest.approx(fr.cosine_distance(u, v))

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            fr.cosine_distance(np.zeros(4), np.ones(4))
        with pytest.raises(ValueError):
            fr.cosine_distance(np.ones(4), np.zeros(4))

    def test_stays_in_range(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = fr.cosine_distance(rng.normal(size=16), rng.normal(size=16))
            assert 0.0 <= d <= 2.0


def _unit(i, dim=8):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def _probe_at(distance, dim=8):
    """Vector at the given cosine distance from _unit(0)."""
    c = 1.0 - distance
    return c * _unit(0, dim) + np.sqrt(1.0 - c * c) * _unit(1, dim)


class TestGallery:
    def test_enrollment_normalizes(self):
        g = fr.Gallery()
        g.enroll("a", np.array([3.0, 0.0, 0.0, 4.0]))
        (v,) = g.vectors("a")
        assert np.linalg.norm(v) == pytest.approx(1.0)

    def test_zero_embedding_rejected(self):
        with pytest.raises(ValueError):
            fr.Gallery().enroll("a", np.zeros(4))

    def test_distractor_flag_conflict_rejected(self):
        g = fr.Gallery()
        g.enroll("a", _unit(0), distractor=True)
        with pytest.raises(ValueError):
            g.enroll("a", _unit(1), distractor=False)

    def test_save_load_round_trip(self, tmp_path):
        g = fr.Gallery()
        rng = np.random.default_rng(3)
        g.enroll("wanted_01", rng.normal(size=8))
        g.enroll("wanted_01", rng.normal(size=8))
        g.enroll("crowd_07", rng.normal(size=8), distractor=True)
        g.save(tmp_path / "gallery")
        loaded = fr.Gallery.load(tmp_path / "gallery")

        assert loaded.identities() == g.identities()
        for identity in g.identities():
            assert loaded.is_distractor(identity) == g.is_distractor(identity)
            for a, b in zip(loaded.vectors(identity), g.vectors(identity)):
                assert np.array_equal(a, b)

    def test_unknown_identity_rejected(self):
        with pytest.raises(ValueError):
            fr.Gallery().vectors("ghost")


class TestIdentify:
    def test_threshold_is_strict_at_both_sides(self):
        g = fr.Gallery()
        g.enroll("a", _unit(0))
        hit = fr.identify(_probe_at(0.41), g, threshold=0.42)
        assert hit is not None and hit[0] == "a"
        assert hit[1] == pytest.approx(0.41, abs=1e-12)
        assert fr.identify(_probe_at(0.43), g, threshold=0.42) is None

    def test_exact_match(self):
        g = fr.Gallery()
        g.enroll("a", _unit(0))
        g.enroll("b", _unit(1))
        identity, distance = fr.identify(_unit(1), g)
        assert identity == "b"
        assert distance == pytest.approx(0.0, abs=1e-12)

    def test_min_over_enrolled_vectors(self):
        g = fr.Gallery()
        g.enroll("a", _unit(2))          # far from probe
        g.enroll("a", _probe_at(0.10))   # near
        identity, distance = fr.identify(_unit(0), g)
        assert identity == "a"
        assert distance == pytest.approx(0.10, abs=1e-12)

    def test_tie_breaks_on_identity_id(self):
        g = fr.Gallery()
        g.enroll("zeta", _unit(0))
        g.enroll("alpha", _unit(0))
        assert fr.identify(_unit(0), g)[0] == "alpha"

    def test_scale_invariance_of_probe(self):
        g = fr.Gallery()
        g.enroll("a", _unit(0))
        g.enroll("b", _probe_at(0.9))
        assert fr.identify(_probe_at(0.2), g) == fr.identify(_probe_at(0.2) * 40.0, g)

    def test_enrollment_idempotence(self):
        g = fr.Gallery()
        g.enroll("a", _unit(0))
        g.enroll("b", _probe_at(0.3))
        before = fr.identify(_probe_at(0.15), g)
        g.enroll("a", _unit(0))
        g.enroll("b", _probe_at(0.3))
        assert fr.identify(_probe_at(0.15), g) == before

    def test_empty_gallery_rejected(self):
        with pytest.raises(ValueError):
            fr.identify(_unit(0), fr.Gallery())


class TestAlarmState:
    def test_raises_exactly_at_persistency(self):
        state = fr.AlarmState(persistency=7)
        for _ in range(6):
            state.record("a")
        assert not state.alarm_raised("a")
        assert state.record("a") is True
        assert state.alarm_raised("a")
        assert state.count("a") == 7

    def test_counters_are_per_identity(self):
        state = fr.AlarmState(persistency=3)
        state.record("a")
        state.record("b")
        state.record("a")
        assert state.count("a") == 2
        assert state.count("b") == 1
        assert state.raised_identities() == ()

    def test_alarm_latches(self):
        state = fr.AlarmState(persistency=2)
        state.record("a")
        state.record("a")
        state.record("a")
        assert state.alarm_raised("a")

    def test_persistency_lower_bound(self):
        with pytest.raises(ValueError):
            fr.AlarmState(persistency=0)


def _pipeline_recognizing(model, frame, identity="suspect_00", threshold=fr.ID_THRESHOLD):
    """Gallery enrolled with the frame's own aligned embedding: distance ~0."""
    gallery = fr.Gallery()
    aligned = fr.align(frame, fr.detect(frame), model.input_shape[:2])
    gallery.enroll(identity, embed(model, aligned))
    return fr.FRPipeline(model=model, gallery=gallery, threshold=threshold)


class TestProcessFrame:
    def test_recognized_updates_alarm(self, target_model, frontal_frame):
        pipeline = _pipeline_recognizing(target_model, frontal_frame)
        state = fr.AlarmState()
        outcome = fr.process_frame(pipeline, frontal_frame, state)
        assert outcome.kind == "recognized"
        assert outcome.identity == "suspect_00"
        assert outcome.distance < 1e-9
        assert state.count("suspect_00") == 1

    def test_unrecognized_face(self, target_model, frontal_frame):
        gallery = fr.Gallery()
        gallery.enroll("someone_else", _unit(0, dim=64))
        pipeline = fr.FRPipeline(model=target_model, gallery=gallery)
        state = fr.AlarmState()
        outcome = fr.process_frame(pipeline, frontal_frame, state)
        assert outcome.kind == "detected_unrecognized"
        assert state.count("someone_else") == 0

    def test_small_face_skipped(self, target_model):
        pipeline = fr.FRPipeline(model=target_model, gallery=fr.Gallery())
        state = fr.AlarmState()
        outcome = fr.process_frame(pipeline, _frame_with((10.0, 10.0, 24.0, 24.0)), state)
        assert outcome.kind == "no_detection"
        assert state.count("suspect_00") == 0

    def test_frame_error_becomes_logged_no_detection(self, target_model, frontal_frame):
        pipeline = _pipeline_recognizing(target_model, frontal_frame)
        points = {k: (20.0, 20.0) for k in
                  ("left_eye", "right_eye", "nose_tip", "mouth_left", "mouth_right")}
        bad = _frame_with((0.0, 0.0, 40.0, 40.0), points=points)
        outcome = fr.process_frame(pipeline, bad, fr.AlarmState())
        assert outcome.kind == "no_detection"
        assert outcome.note != ""


class TestEvaluateStream:
    def test_all_recognized(self, target_model, frontal_frame):
        pipeline = _pipeline_recognizing(target_model, frontal_frame)
        stream = sf.synth_stream(sf.identity_from_seed(3), STILL, 8, seed=5)
        ev = fr.evaluate_stream(pipeline, stream, "suspect_00")
        assert (ev.recognized, ev.detected_unrecognized) == (8, 0)
        assert ev.r_rec == 1.0
        assert ev.alarms == {"still": True}

    def test_none_recognized(self, target_model):
        gallery = fr.Gallery()
        gallery.enroll("someone_else", _unit(0, dim=64))
        pipeline = fr.FRPipeline(model=target_model, gallery=gallery)
        stream = sf.synth_stream(sf.identity_from_seed(3), STILL, 8, seed=5)
        ev = fr.evaluate_stream(pipeline, stream, "suspect_00")
        assert (ev.recognized, ev.detected_unrecognized) == (0, 8)
        assert ev.r_rec == 0.0
        assert ev.alarms == {"still": False}

    def test_wrong_identity_counts_as_detected_only(self, target_model, frontal_frame):
        # the stream face matches an enrolled identity that is not the ground
        # truth, so every hit lands in D and the participant's alarm stays off
        pipeline = _pipeline_recognizing(target_model, frontal_frame, identity="impostor")
        stream = sf.synth_stream(sf.identity_from_seed(3), STILL, 8, seed=5)
        ev = fr.evaluate_stream(pipeline, stream, "suspect_00")
        assert (ev.recognized, ev.detected_unrecognized) == (0, 8)
        assert ev.r_rec == 0.0
        assert ev.alarms == {"still": False}
        assert all(rec.identity == "impostor" for rec in ev.log)

    def test_alarm_needs_seven_frames(self, target_model, frontal_frame):
        pipeline = _pipeline_recognizing(target_model, frontal_frame)
        short = sf.synth_stream(sf.identity_from_seed(3), STILL, 6, seed=5)
        assert fr.evaluate_stream(pipeline, short, "suspect_00").alarms["still"] is False
        exact = sf.synth_stream(sf.identity_from_seed(3), STILL, 7, seed=5)
        assert fr.evaluate_stream(pipeline, exact, "suspect_00").alarms["still"] is True

    def test_undetected_stream_marks_rate_undefined(self, target_model):
        pipeline = fr.FRPipeline(model=target_model, gallery=fr.Gallery())
        frames = [_frame_with((10.0, 10.0, 24.0, 24.0))] * 3
        ev = fr.evaluate_stream(pipeline, frames, "suspect_00")
        assert (ev.recognized, ev.detected_unrecognized) == (0, 0)
        assert ev.r_rec is None
        assert ev.detections == 0

    def test_counts_match_log(self, target_model, frontal_frame):
        pipeline = _pipeline_recognizing(target_model, frontal_frame)
        stream = sf.synth_stream(sf.identity_from_seed(3), STILL, 5, seed=5)
        ev = fr.evaluate_stream(pipeline, stream, "suspect_00")
        accepted = sum(1 for rec in ev.log if rec.kind != "no_detection")
        assert ev.detections == accepted
        assert len(ev.log) == 5

    def test_empty_stream_rejected(self, target_model):
        pipeline = fr.FRPipeline(model=target_model, gallery=fr.Gallery())
        with pytest.raises(ValueError):
            fr.evaluate_stream(pipeline, [], "suspect_00")


class TestReporting:
    def test_rate_formatting(self):
        assert fr.format_rate(47 / (47 + 103)) == "31.33%"
        assert fr.format_rate(0.0) == "0.00%"
        assert fr.format_rate(1.0) == "100.00%"
        assert fr.format_rate(None) == "undef"

    def test_stream_log_csv(self, target_model, frontal_frame, tmp_path):
        pipeline = _pipeline_recognizing(target_model, frontal_frame)
        stream = sf.synth_stream(sf.identity_from_seed(3), STILL, 4, seed=5)
        ev = fr.evaluate_stream(pipeline, stream, "suspect_00")
        path = tmp_path / "log.csv"
        fr.write_stream_log(ev, path)

        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["frame", "camera", "outcome", "matched_id", "distance"]
        assert len(rows) == 5
        assert all(row[2] == "recognized" for row in rows[1:])
        assert float(rows[1][4]) < 1e-9
