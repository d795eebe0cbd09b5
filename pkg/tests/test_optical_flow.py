import os

import numpy as np
import pytest
from scipy import ndimage

from strokedetect.errors import FormatError, ShapeError
from strokedetect.optical_flow import (
    FlowCache,
    FlowConfig,
    FlowField,
    compute_flow,
    flow_stack_for_window,
    read_flo,
    to_grayscale,
    write_flo,
)


def texture(seed, size=80):
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.uniform(0, 255, (size, size)), 1.5)
    return (img - img.min()) / (img.max() - img.min()) * 255


def translated_pair(seed, dx, dy, size=64, margin=8):
    """frame_b(x, y) = frame_a(x - dx, y - dy), cropped from a larger canvas."""
    big = texture(seed, size + 2 * margin)
    moved = np.roll(np.roll(big, dy, axis=0), dx, axis=1)
    crop = (slice(margin, margin + size), slice(margin, margin + size))
    return big[crop], moved[crop]


def interior_median(flow, border=4):
    inner = (slice(border, -border), slice(border, -border))
    return float(np.median(flow.u[inner])), float(np.median(flow.v[inner]))


def test_grayscale_coefficients():
    px = np.array([[[255, 255, 255], [0, 0, 0], [255, 0, 0]]], dtype=np.uint8)
    y = to_grayscale(px)
    assert y[0, 0] == pytest.approx(255.0, abs=1e-12)
    assert y[0, 1] == 0.0
    assert y[0, 2] == pytest.approx(76.245, abs=1e-12)


def test_identical_frames_zero_flow():
    a = texture(1, 64)
    f = compute_flow(a, a.copy())
    assert max(np.abs(f.u).max(), np.abs(f.v).max()) <= 1e-6


def test_constant_frames_zero_flow():
    f = compute_flow(np.full((16, 16), 7.0), np.full((16, 16), 200.0))
    assert not f.u.any() and not f.v.any()


def test_shift_right_one_pixel():
    a, b = translated_pair(2, 1, 0)
    mu, mv = interior_median(compute_flow(a, b))
    assert 0.5 <= mu <= 1.5 and -0.5 <= mv <= 0.5


def test_shift_two_minus_one():
    a, b = translated_pair(3, 2, -1)
    mu, mv = interior_median(compute_flow(a, b))
    assert abs(mu - 2) <= 0.75 and abs(mv + 1) <= 0.75


def test_dimension_mismatch_rejected():
    with pytest.raises(ShapeError):
        compute_flow(np.zeros((8, 8)), np.zeros((8, 9)))


def test_deterministic():
    a, b = translated_pair(4, 1, 1)
    f1, f2 = compute_flow(a, b), compute_flow(a, b)
    assert f1.u.tobytes() == f2.u.tobytes() and f1.v.tobytes() == f2.v.tobytes()


@pytest.mark.parametrize("shift", [(1, 0), (2, -1), (0, 2)])
def test_energy_non_increasing(shift):
    a, b = translated_pair(5, *shift)
    traces = {}
    compute_flow(a, b, FlowConfig(iterations_per_level=40), energies=traces)
    assert set(traces) == {0, 1, 2}
    for trace in traces.values():
        trace = np.asarray(trace)
        assert np.all(np.diff(trace) <= 1e-12 * trace[0])


def test_small_image_uses_fewer_levels():
    # 16x16 supports only 16 -> 8; coarsest level stays >= 8 px
    a, b = translated_pair(6, 1, 0, size=16, margin=4)
    traces = {}
    compute_flow(a, b, energies=traces)
    assert set(traces) == {0, 1}


def test_flow_config_validation():
    for bad in (dict(pyramid_levels=0), dict(scale_factor=1.0), dict(smoothness_alpha=0),
                dict(iterations_per_level=0)):
        with pytest.raises(ValueError):
            FlowConfig(**bad)


# --- window stacking ------------------------------------------------------


def test_stack_identical_frames_all_zero():
    frames = [np.full((8, 12), 40.0)] * 75
    out = flow_stack_for_window(frames)
    assert out.shape == (2, 75, 8, 12) and not out.any()


def test_stack_shape_and_duplicated_last_slice():
    a, b = translated_pair(7, 1, 0, size=16, margin=4)
    frames = [a, b] * 2 + [a]
    cfg = FlowConfig(iterations_per_level=20)
    out = flow_stack_for_window(frames, cfg, window_len=5)
    assert out.shape == (2, 5, 16, 16)
    np.testing.assert_array_equal(out[:, 4], out[:, 3])
    assert np.abs(out).max() <= 1.0


def test_stack_clips_and_scales():
    calls = []

    def fake(t):
        calls.append(t)
        return FlowField(np.full((2, 2), 40.0), np.full((2, 2), -10.0))

    out = flow_stack_for_window([np.zeros((2, 2))] * 4, window_len=4, flow_fn=fake)
    assert calls == [0, 1, 2]
    assert np.all(out[0] == 1.0) and np.all(out[1] == -0.5)


def test_stack_wrong_count():
    with pytest.raises(ShapeError):
        flow_stack_for_window([np.zeros((4, 4))] * 74)


# --- .flo -----------------------------------------------------------------


def test_flo_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    f = FlowField(rng.normal(size=(5, 7)).astype(np.float32).astype(float),
                  rng.normal(size=(5, 7)).astype(np.float32).astype(float))
    write_flo(tmp_path / "x.flo", f)
    back = read_flo(tmp_path / "x.flo")
    np.testing.assert_array_equal(back.u, f.u)
    np.testing.assert_array_equal(back.v, f.v)


def test_flo_layout(tmp_path):
    f = FlowField(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]))
    write_flo(tmp_path / "x.flo", f)
    raw = (tmp_path / "x.flo").read_bytes()
    assert raw[:4] == b"PIEH"
    assert np.frombuffer(raw[4:12], "<i4").tolist() == [2, 1]
    assert np.frombuffer(raw[12:], "<f4").tolist() == [1.0, 3.0, 2.0, 4.0]


def test_flo_rejects_garbage(tmp_path):
    (tmp_path / "bad.flo").write_bytes(b"ABCD" + bytes(8))
    with pytest.raises(FormatError):
        read_flo(tmp_path / "bad.flo")
    write_flo(tmp_path / "ok.flo", FlowField.zeros(3, 3))
    (tmp_path / "short.flo").write_bytes((tmp_path / "ok.flo").read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_flo(tmp_path / "short.flo")


def test_flow_cache_reuses_file(tmp_path):
    a, b = translated_pair(8, 1, 0, size=16, margin=4)
    cache = FlowCache(tmp_path)
    cfg = FlowConfig(iterations_per_level=10)
    f1 = cache.get("vid", 3, a, b, cfg)
    path = cache.path("vid", 3, cfg, a.shape)
    mtime = os.path.getmtime(path)
    f2 = cache.get("vid", 3, a, b, cfg)
    assert os.path.getmtime(path) == mtime
    np.testing.assert_array_equal(f1.u, f2.u)
