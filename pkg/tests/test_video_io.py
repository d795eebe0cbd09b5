import json
import os

import numpy as np
import pytest

from strokedetect.errors import FormatError, ShapeError
from strokedetect.tensor_core import OptimState
from strokedetect.video_io import (
    AnnotationSet,
    FrameSequence,
    Segment,
    load_checkpoint,
    read_annotations,
    read_frame_dir,
    read_ppm,
    resize_bilinear,
    save_checkpoint,
    write_annotations,
    write_frame_dir,
    write_ppm,
)


@pytest.fixture
def seq():
    rng = np.random.default_rng(5)
    return FrameSequence(rng.integers(0, 256, size=(4, 6, 8, 3), dtype=np.uint8), fps=25.0)


def test_frame_dir_round_trip(tmp_path, seq):
    write_frame_dir(seq, tmp_path / "v")
    back = read_frame_dir(tmp_path / "v")
    assert back.frames.tobytes() == seq.frames.tobytes()
    assert (back.width, back.height, back.frame_count, back.fps) == (8, 6, 4, 25.0)
    meta = json.loads((tmp_path / "v" / "meta.json").read_text())
    assert meta == {"width": 8, "height": 6, "fps": 25.0, "frame_count": 4}


def test_missing_frame_named(tmp_path, seq):
    write_frame_dir(seq, tmp_path / "v")
    os.remove(tmp_path / "v" / "frame_000002.ppm")
    with pytest.raises(FormatError, match="frame_000002.ppm"):
        read_frame_dir(tmp_path / "v")


def test_maxval_other_than_255_rejected(tmp_path):
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P6\n2 1\n65535\n" + bytes(12))
    with pytest.raises(FormatError, match="maxval"):
        read_ppm(p)


def test_truncated_ppm_rejected(tmp_path):
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(FormatError, match="x.ppm"):
        read_ppm(p)


def test_ppm_header_comments(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# comment\n1 1\n255\n\x01\x02\x03")
    np.testing.assert_array_equal(read_ppm(p), [[[1, 2, 3]]])


def test_inconsistent_dimensions_rejected(tmp_path, seq):
    write_frame_dir(seq, tmp_path / "v")
    write_ppm(tmp_path / "v" / "frame_000001.ppm", np.zeros((3, 3, 3), dtype=np.uint8))
    with pytest.raises(FormatError, match="frame_000001.ppm"):
        read_frame_dir(tmp_path / "v")


# --- resize ---------------------------------------------------------------


def test_resize_same_size_is_identity(seq):
    out = resize_bilinear(seq.frames[0], out_w=8, out_h=6)
    assert out.tobytes() == seq.frames[0].tobytes()


def test_resize_constant_colour():
    img = np.full((7, 9, 3), (10, 200, 33), dtype=np.uint8)
    out = resize_bilinear(img, out_w=320, out_h=128)
    assert out.shape == (128, 320, 3)
    assert np.all(out == np.array([10, 200, 33], dtype=np.uint8))


def test_resize_checkerboard_centre():
    # centre of the 3x3 output samples source (0.5, 0.5): mean of 0,255,255,0 = 127.5 -> 128 (half-up)
    img = np.zeros((2, 2, 3), dtype=np.uint8)
    img[0, 1] = img[1, 0] = 255
    out = resize_bilinear(img, out_w=3, out_h=3)
    assert out[1, 1, 0] == 128
    # corners clamp onto the source corners
    assert out[0, 0, 0] == 0 and out[0, 2, 0] == 255


def test_resize_rejects_zero_extent():
    with pytest.raises(ShapeError):
        resize_bilinear(np.zeros((4, 4, 3), dtype=np.uint8), out_w=0, out_h=3)


def test_resize_rejects_tiny_source():
    with pytest.raises(ShapeError):
        resize_bilinear(np.zeros((1, 4, 3), dtype=np.uint8), out_w=3, out_h=3)


# --- annotations ----------------------------------------------------------


def test_annotations_empty_valid(tmp_path):
    p = tmp_path / "a.json"
    p.write_text(json.dumps({"video_id": "v", "total_frames": 10, "strokes": []}))
    ann = read_annotations(p)
    assert ann.strokes == [] and ann.total_frames == 10


def test_annotations_overlap_rejected(tmp_path):
    p = tmp_path / "a.json"
    p.write_text(json.dumps({"video_id": "v", "total_frames": 1000,
                             "strokes": [{"begin": 0, "end": 100}, {"begin": 50, "end": 150}]}))
    with pytest.raises(FormatError, match="stroke 1"):
        read_annotations(p)


@pytest.mark.parametrize("stroke,idx", [({"begin": 5, "end": 5}, 0), ({"begin": 900, "end": 1001}, 0)])
def test_annotations_bad_segment_rejected(tmp_path, stroke, idx):
    p = tmp_path / "a.json"
    p.write_text(json.dumps({"video_id": "v", "total_frames": 1000, "strokes": [stroke]}))
    with pytest.raises(FormatError, match=f"stroke {idx}"):
        read_annotations(p)


def test_annotations_round_trip(tmp_path):
    ann = AnnotationSet("vid", 500, [Segment(10, 90), Segment(200, 260)])
    write_annotations(ann, tmp_path / "a.json")
    assert read_annotations(tmp_path / "a.json") == ann


# --- checkpoints ----------------------------------------------------------


def _params():
    rng = np.random.default_rng(0)
    return {"conv.weight": rng.normal(size=(2, 1, 3, 3, 3)).astype(np.float32),
            "conv.bias": rng.normal(size=2).astype(np.float32),
            "scalarish": np.array([1.5], dtype=np.float32)}


def test_checkpoint_round_trip(tmp_path):
    p = _params()
    state = OptimState({k: np.ones_like(v) for k, v in p.items()}, 7)
    save_checkpoint(p, tmp_path / "m.tsn", state)
    params, st = load_checkpoint(tmp_path / "m.tsn")
    assert list(params) == list(p)
    for k in p:
        assert params[k].tobytes() == p[k].tobytes() and params[k].shape == p[k].shape
    assert st.step_count == 7 and set(st.velocity) == set(p)


def test_checkpoint_truncated(tmp_path):
    save_checkpoint(_params(), tmp_path / "m.tsn")
    data = (tmp_path / "m.tsn").read_bytes()
    (tmp_path / "t.tsn").write_bytes(data[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(tmp_path / "t.tsn")


def test_checkpoint_bad_magic_and_version(tmp_path):
    save_checkpoint(_params(), tmp_path / "m.tsn")
    data = bytearray((tmp_path / "m.tsn").read_bytes())
    (tmp_path / "a.tsn").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(tmp_path / "a.tsn")
    data[4] = 9
    (tmp_path / "b.tsn").write_bytes(bytes(data))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(tmp_path / "b.tsn")


def test_checkpoint_architecture_mismatch(tmp_path):
    save_checkpoint(_params(), tmp_path / "m.tsn")
    expected = {"conv.weight": (4, 1, 3, 3, 3), "conv.bias": (2,), "scalarish": (1,)}
    with pytest.raises(ShapeError, match=r"conv.weight: \(2, 1, 3, 3, 3\) != expected \(4, 1, 3, 3, 3\)"):
        load_checkpoint(tmp_path / "m.tsn", expected)
