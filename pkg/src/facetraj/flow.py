"""Pyramidal Lucas-Kanade point tracking with forward-backward screening.

Tracking follows Bouguet's pyramidal formulation: a 3-level Gaussian
pyramid (5-tap binomial filter, factor 2), a 21x21 integration window,
at most 30 Gauss-Newton iterations per level stopping once the update
falls below 0.01 px, and bilinear sampling with replicated borders. A
point is lost when the smaller structure-tensor eigenvalue drops below
``1e-4 * window area``, when its estimate leaves the image, or when the
update becomes non-finite. The per-level refinement runs in the compiled
kernel when available (see ``facetraj._backend``).
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _backend
from .errors import DimensionMismatch, InputError

PYRAMID_LEVELS = 3
WINDOW = 21
MAX_ITER = 30
EPSILON = 0.01
MIN_EIG_FACTOR = 1e-4

_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_SCHARR_X = np.array([[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]]) / 32.0


class Status(enum.IntEnum):
    OK = 0
    LOST_FORWARD = 1
    LOST_BACKWARD = 2


@dataclass(frozen=True)
class GrayFrame:
    """Luminance image with values in [0, 1], stored row-major as ``data[y, x]``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or min(arr.shape) < 2:
            raise InputError(f"frame must be a 2-D array of at least 2x2 pixels, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("frame contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]


class Pyramid:
    """Gaussian pyramid plus Scharr gradients for every level."""

    def __init__(self, frame, levels=PYRAMID_LEVELS):
        img = frame.data if isinstance(frame, GrayFrame) else GrayFrame(frame).data
        self.shape = img.shape
        self.images = [img]
        for _ in range(levels - 1):
            prev = self.images[-1]
            if min(prev.shape) < 4:
                break
            blur = ndimage.correlate1d(prev, _BINOMIAL, axis=0, mode="mirror")
            blur = ndimage.correlate1d(blur, _BINOMIAL, axis=1, mode="mirror")
            self.images.append(np.ascontiguousarray(blur[::2, ::2]))
        self.grads = [
            (
                np.ascontiguousarray(ndimage.correlate(im, _SCHARR_X, mode="nearest")),
                np.ascontiguousarray(ndimage.correlate(im, _SCHARR_X.T, mode="nearest")),
            )
            for im in self.images
        ]

    def __len__(self):
        return len(self.images)


def _as_pyramid(frame, levels):
    return frame if isinstance(frame, Pyramid) else Pyramid(frame, levels)


def lk_track(prev, next, pts, *, levels=PYRAMID_LEVELS, window=WINDOW, max_iter=MAX_ITER,
             eps=EPSILON, backend=None):
    """Track ``pts`` from ``prev`` to ``next``.

    ``prev``/``next`` may be GrayFrames, 2-D arrays or prebuilt Pyramids.
    Returns ``(new_pts, ok)``; ``new_pts`` is NaN where ``ok`` is False.
    """
    kern = _backend.get(backend)
    P = _as_pyramid(prev, levels)
    N = _as_pyramid(next, levels)
    if P.shape != N.shape:
        raise DimensionMismatch(f"frame shapes differ: {P.shape} vs {N.shape}")
    pts = np.ascontiguousarray(np.asarray(pts, dtype=np.float64).reshape(-1, 2))
    n = len(pts)
    disp = np.zeros((n, 2))
    active = np.ones(n, dtype=np.uint8)
    half = window // 2
    min_eig = MIN_EIG_FACTOR * window * window
    nlev = min(len(P), len(N))
    for level in range(nlev - 1, -1, -1):
        scale = 2.0**level
        kern.lk_level(P.images[level], P.grads[level][0], P.grads[level][1], N.images[level],
                      np.ascontiguousarray(pts / scale), disp, active, half, max_iter, eps, min_eig)
        if level:
            disp *= 2.0
    out = pts + disp
    h, w = P.shape
    ok = (active.astype(bool) & np.isfinite(out).all(axis=1)
          & (out[:, 0] >= 0) & (out[:, 0] <= w - 1) & (out[:, 1] >= 0) & (out[:, 1] <= h - 1))
    out[~ok] = np.nan
    return out, ok


@dataclass
class TrackedPointSet:
    origin: np.ndarray
    forward: np.ndarray
    back: np.ndarray
    status: np.ndarray
    fb_error: np.ndarray

    def __len__(self):
        return len(self.origin)

    @property
    def ok(self):
        return self.status == Status.OK

    @property
    def flow(self):
        return self.forward - self.origin


def fb_error(origin, back):
    """Euclidean forward-backward drift ``|t_i - t''_i|`` per point."""
    origin = np.asarray(origin, dtype=np.float64).reshape(-1, 2)
    back = np.asarray(back, dtype=np.float64).reshape(-1, 2)
    if origin.shape != back.shape:
        raise DimensionMismatch("origin and back point lists differ in length")
    return np.hypot(origin[:, 0] - back[:, 0], origin[:, 1] - back[:, 1])


def track_forward_backward(prev, next, pts, **kw):
    levels = kw.get("levels", PYRAMID_LEVELS)
    P = _as_pyramid(prev, levels)
    N = _as_pyramid(next, levels)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    fwd, ok_f = lk_track(P, N, pts, **kw)
    back = np.full_like(pts, np.nan)
    ok_b = np.zeros(len(pts), dtype=bool)
    if ok_f.any():
        b, okb = lk_track(N, P, fwd[ok_f], **kw)
        back[ok_f] = b
        ok_b[ok_f] = okb
    status = np.full(len(pts), Status.LOST_FORWARD, dtype=np.int8)
    status[ok_f] = Status.LOST_BACKWARD
    status[ok_f & ok_b] = Status.OK
    err = np.full(len(pts), np.nan)
    good = status == Status.OK
    err[good] = fb_error(pts[good], back[good])
    return TrackedPointSet(pts, fwd, back, status, err)


def screen_points(tps: TrackedPointSet) -> np.ndarray:
    """Indices of the ceil(n_ok/2) ok points with the smallest FB error, ascending.

    Ties in FB error are broken by original index.
    """
    ok_idx = np.flatnonzero(np.asarray(tps.status) == Status.OK)
    if ok_idx.size == 0:
        return ok_idx
    keep = math.ceil(ok_idx.size / 2)
    err = np.asarray(tps.fb_error)[ok_idx]
    order = np.lexsort((ok_idx, err))
    return np.sort(ok_idx[order[:keep]])


# --- frame files -----------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path) -> GrayFrame:
    """Read a binary (P5) PGM with 8- or 16-bit samples, scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(raw, pos)
        if not m:
            raise InputError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise InputError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace byte before the raster
    if not 0 < maxval < 65536:
        raise InputError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos) if len(raw) - pos >= count * dtype.itemsize else None
    if data is None:
        raise InputError(f"{path}: truncated PGM raster")
    return GrayFrame(data.reshape(height, width).astype(np.float64) / maxval)


def write_pgm(path, frame, bits=8) -> None:
    arr = frame.data if isinstance(frame, GrayFrame) else np.asarray(frame, dtype=np.float64)
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(arr, 0.0, 1.0) * maxval)
    data = q.astype("u1" if bits == 8 else ">u2")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        fh.write(data.tobytes())


def frame_path(directory, index) -> Path:
    return Path(directory) / f"{index:06d}.pgm"
