import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from facetraj import flow
from facetraj.errors import DimensionMismatch, InputError
from facetraj.flow import Status, TrackedPointSet

from .conftest import band_limited_texture, fourier_shift


def _interior_grid(shape, margin=24, step=8):
    h, w = shape
    ys, xs = np.mgrid[margin:h - margin:step, margin:w - margin:step]
    return np.column_stack([xs.ravel(), ys.ravel()]).astype(float) + 0.3


def test_fb_error_examples():
    np.testing.assert_array_equal(flow.fb_error([[5, 5]], [[5, 5]]), [0.0])
    np.testing.assert_array_equal(flow.fb_error([[5, 5]], [[5.5, 5]]), [0.5])
    np.testing.assert_array_equal(flow.fb_error([[0, 0]], [[3, 4]]), [5.0])


def test_fb_error_length_mismatch():
    with pytest.raises(DimensionMismatch):
        flow.fb_error(np.zeros((3, 2)), np.zeros((2, 2)))


@given(hnp.arrays(np.float64, (8, 2), elements=st.integers(-1000, 1000).map(float)),
       hnp.arrays(np.float64, (8, 2), elements=st.integers(-1000, 1000).map(float)),
       st.integers(-1000, 1000), st.integers(-1000, 1000))
def test_fb_error_translation_symmetric(a, b, dx, dy):
    # integer-valued coordinates keep the translation exact in floating point
    t = np.array([dx, dy], dtype=float)
    np.testing.assert_array_equal(flow.fb_error(a, b), flow.fb_error(a + t, b + t))


def _tps(errors, status=None):
    n = len(errors)
    status = np.zeros(n, dtype=np.int8) if status is None else np.asarray(status, dtype=np.int8)
    err = np.where(status == Status.OK, np.asarray(errors, dtype=float), np.nan)
    z = np.zeros((n, 2))
    return TrackedPointSet(z, z, z, status, err)


def test_screen_keeps_smallest_half():
    tps = _tps(np.arange(10, 0, -1, dtype=float))  # errors 10..1
    assert flow.screen_points(tps).tolist() == [5, 6, 7, 8, 9]


def test_screen_odd_count_and_all_lost():
    assert len(flow.screen_points(_tps(np.arange(7.0)))) == 4
    lost = _tps(np.arange(5.0), [Status.LOST_FORWARD] * 3 + [Status.LOST_BACKWARD] * 2)
    assert flow.screen_points(lost).size == 0


def test_screen_ties_broken_by_index():
    assert flow.screen_points(_tps([1.0, 1.0, 1.0, 1.0])).tolist() == [0, 1]


@given(st.lists(st.tuples(st.integers(0, 2), st.floats(0, 10, allow_nan=False)), min_size=0, max_size=60))
def test_screen_properties(items):
    status = [s for s, _ in items]
    errors = [e for _, e in items]
    tps = _tps(errors, status)
    keep = flow.screen_points(tps)
    ok = [i for i, s in enumerate(status) if s == Status.OK]
    assert len(keep) == math.ceil(len(ok) / 2)
    assert list(keep) == sorted(keep) and set(keep) <= set(ok)
    dropped = sorted(set(ok) - set(keep))
    if len(keep) and dropped:
        assert max(errors[i] for i in keep) <= min(errors[i] for i in dropped)


def test_identity_flow_is_zero(backend):
    img = band_limited_texture((96, 96), seed=1)
    pts = _interior_grid(img.shape)
    new, ok = flow.lk_track(img, img, pts, backend=backend)
    assert ok.all()
    assert np.abs(new - pts).max() <= 1e-3


def test_recovers_two_pixel_shift(backend):
    img = band_limited_texture((128, 128), seed=2)
    moved = fourier_shift(img, 2.0, 0.0)
    pts = _interior_grid(img.shape)
    new, ok = flow.lk_track(img, moved, pts, backend=backend)
    err = np.hypot(new[:, 0] - pts[:, 0] - 2.0, new[:, 1] - pts[:, 1])
    assert np.mean(ok & (err <= 0.1)) >= 0.95


def test_constant_frames_lose_every_point(backend):
    img = np.full((64, 64), 0.5)
    tps = flow.track_forward_backward(img, img, _interior_grid(img.shape, 16), backend=backend)
    assert np.all(tps.status == Status.LOST_FORWARD)
    assert np.all(np.isnan(tps.fb_error))


def test_backends_agree():
    pytest.importorskip("facetraj._ckernels")
    img = band_limited_texture((96, 96), seed=4)
    moved = fourier_shift(img, -1.3, 0.7)
    pts = _interior_grid(img.shape, 16, 6)
    a, oka = flow.lk_track(img, moved, pts, backend="python")
    b, okb = flow.lk_track(img, moved, pts, backend="cython")
    assert np.array_equal(oka, okb)
    np.testing.assert_allclose(a[oka], b[okb], atol=1e-9)


def test_forward_backward_status_and_error():
    img = band_limited_texture((96, 96), seed=5)
    moved = fourier_shift(img, 0.5, -0.5)
    tps = flow.track_forward_backward(img, moved, _interior_grid(img.shape))
    good = tps.ok
    assert good.mean() > 0.9
    assert np.all(np.isfinite(tps.fb_error[good])) and np.all(tps.fb_error[good] >= 0)
    assert np.all(np.isnan(tps.fb_error[~good]))
    assert np.median(tps.fb_error[good]) < 0.05


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        flow.lk_track(np.zeros((32, 32)), np.zeros((32, 33)), [[10.0, 10.0]])


@pytest.mark.parametrize("bits", [8, 16])
def test_pgm_round_trip(tmp_path, bits):
    img = band_limited_texture((20, 30), seed=6)
    path = flow.frame_path(tmp_path, 3)
    assert path.name == "000003.pgm"
    flow.write_pgm(path, img, bits=bits)
    back = flow.read_pgm(path)
    assert back.width == 30 and back.height == 20
    assert np.abs(back.data - img).max() <= 0.5 / (2**bits - 1) + 1e-12


def test_pgm_rejects_other_formats(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(InputError):
        flow.read_pgm(p)
    p.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(InputError):
        flow.read_pgm(p)
