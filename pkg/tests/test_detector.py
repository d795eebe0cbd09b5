import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import stroke_runs
from strokedetect import model as net
from strokedetect.detector import (
    Detection,
    DetectorConfig,
    classify_video,
    detect,
    fuse,
    read_detections,
    sliding_windows,
    write_detections,
)
from strokedetect.errors import FormatError, ShortVideoWarning
from strokedetect.video_io import FrameSequence, Segment

S = Segment
SMALL = net.ModelConfig(conv_channels=(2, 2, 2, 2), feature_dim=4, input_t=75, input_h=16, input_w=16)


def probs_from(values, L=75):
    return [(S(i * L, (i + 1) * L), p) for i, p in enumerate(values)]


def test_sliding_windows():
    assert sliding_windows(300) == [S(0, 75), S(75, 150), S(150, 225), S(225, 300)]
    w = sliding_windows(380)
    assert len(w) == 5 and w[-1].end == 375
    assert sliding_windows(74) == []
    assert sliding_windows(0) == []


def test_fuse_runs():
    dets = fuse(probs_from([0.9, 0.8, 0.1, 0.7]))
    assert [d.segment for d in dets] == [S(0, 150), S(225, 300)]
    assert dets[0].confidence == pytest.approx(0.85)
    assert fuse(probs_from([0.1, 0.2, 0.49])) == []
    assert fuse([]) == []


def test_fuse_sixty_windows():
    dets = fuse(probs_from([0.9] * 60))
    assert [d.segment for d in dets] == [S(0, 4500)]
    capped = fuse(probs_from([0.9] * 60), DetectorConfig(max_duration=300))
    assert len(capped) == 15
    assert all(len(d.segment) == 300 for d in capped)
    assert capped[0].segment == S(0, 300) and capped[-1].segment == S(4200, 4500)


def test_fuse_cap_not_multiple_of_window():
    dets = fuse(probs_from([0.6, 1.0, 1.0]), DetectorConfig(max_duration=100))
    assert [d.segment for d in dets] == [S(0, 100), S(100, 200), S(200, 225)]
    # [0,100) overlaps windows 0 and 1
    assert dets[0].confidence == pytest.approx(0.8)


def test_fuse_threshold_inclusive():
    assert len(fuse(probs_from([0.5]))) == 1
    assert fuse(probs_from([0.5]), DetectorConfig(stroke_threshold=0.6)) == []


def test_fuse_rejects_gaps():
    with pytest.raises(ValueError):
        fuse([(S(0, 75), 0.9), (S(150, 225), 0.9)])


def check_detections(dets, total, L=75, capped=False):
    for d in dets:
        assert 0 <= d.segment.begin < d.segment.end <= total
        assert 0.0 <= d.confidence <= 1.0
        if not capped:
            assert d.segment.begin % L == 0 and d.segment.end % L == 0
    for a, b in zip(dets, dets[1:]):
        assert a.segment.end <= b.segment.begin


def test_exhaustive_small_cases():
    thresholds = [0.25, 0.5, 0.75]
    for n in range(0, 9):
        for levels in itertools.product([0.0, 0.5, 1.0], repeat=n):
            probs = probs_from(levels)
            covered = []
            for th in thresholds:
                cfg = DetectorConfig(stroke_threshold=th)
                dets = fuse(probs, cfg)
                check_detections(dets, 75 * n)
                labels = [p >= th for p in levels]
                runs = stroke_runs(labels)
                assert [(d.segment.begin // 75, d.segment.end // 75) for d in dets] == runs
                # idempotence: relabel from detections and fuse again
                again = fuse(probs_from([1.0 if any(d.segment.begin <= i * 75 < d.segment.end for d in dets)
                                         else 0.0 for i in range(n)]), cfg)
                assert [d.segment for d in again] == [d.segment for d in dets]
                covered.append(sum(len(d.segment) for d in dets))
            assert covered == sorted(covered, reverse=True)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), max_size=30), st.integers(1, 400))
def test_cap_property(levels, cap):
    probs = probs_from(levels)
    base = fuse(probs)
    capped = fuse(probs, DetectorConfig(max_duration=cap))
    check_detections(capped, 75 * len(levels), capped=True)
    assert all(len(d.segment) <= cap for d in capped)
    # capping only splits, never moves frames
    frames = lambda ds: sorted(f for d in ds for f in range(d.segment.begin, d.segment.end))
    assert frames(base) == frames(capped)


def always_stroke_params(cfg=SMALL):
    params = net.zero_params(cfg)
    params["head.bias"] = np.array([-50.0, 50.0])
    return params


def test_classify_contract():
    rng = np.random.default_rng(0)
    seq = FrameSequence(rng.integers(0, 256, (160, 16, 16, 3), dtype=np.uint8), 25.0)
    params = net.init_params(SMALL)
    out = classify_video(params, seq, SMALL)
    assert [w for w, _ in out] == sliding_windows(160)
    assert all(0.0 <= p <= 1.0 for _, p in out)
    assert out == classify_video(params, seq, SMALL)


def test_classify_short_video_warns():
    seq = FrameSequence(np.zeros((74, 16, 16, 3), np.uint8), 25.0)
    with pytest.warns(ShortVideoWarning):
        assert classify_video(net.zero_params(SMALL), seq, SMALL) == []


def test_classify_window_mismatch():
    seq = FrameSequence(np.zeros((80, 16, 16, 3), np.uint8), 25.0)
    with pytest.raises(ValueError):
        classify_video(net.zero_params(SMALL), seq, SMALL, det_cfg=DetectorConfig(window_len=50))


def test_detect_symmetric_params_threshold():
    seq = FrameSequence(np.zeros((150, 16, 16, 3), np.uint8), 25.0)
    params = net.zero_params(SMALL)
    assert detect(params, seq, SMALL, det_cfg=DetectorConfig(stroke_threshold=0.6)) == []
    assert [d.segment for d in detect(params, seq, SMALL)] == [S(0, 150)]


def test_detect_always_stroke_long_video():
    seq = FrameSequence(np.zeros((4500, 16, 16, 3), np.uint8), 25.0)
    dets = detect(always_stroke_params(), seq, SMALL)
    assert dets == [Detection(S(0, 4500), 1.0)]
    capped = detect(always_stroke_params(), seq, SMALL, det_cfg=DetectorConfig(max_duration=300))
    assert [len(d.segment) for d in capped] == [300] * 15


def test_json_roundtrip(tmp_path):
    one = [("v1", [Detection(S(0, 75), 0.25)])]
    path = tmp_path / "d.json"
    write_detections(path, one)
    assert read_detections(path) == one
    many = one + [("v2", [])]
    write_detections(path, many)
    assert read_detections(path) == many


def test_json_malformed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"video_id": "v", "detections": [{"begin": 0}]}')
    with pytest.raises(FormatError):
        read_detections(path)
    path.write_text("{not json")
    with pytest.raises(FormatError):
        read_detections(path)


def test_config_and_detection_validation():
    with pytest.raises(ValueError):
        Detection(S(0, 75), 1.5)
    with pytest.raises(ValueError):
        DetectorConfig(stroke_threshold=1.0)
    with pytest.raises(ValueError):
        DetectorConfig(max_duration=0)
