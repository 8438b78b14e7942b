"""Virtual-anchor displacement series, frame validity, windowing and storage."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyRegion, InputError, ShapeError, TooShort
from .geom import ROI_NAMES

N_FEATURES = 28
WINDOW = 64
DEFAULT_FPS = 25.0
MIN_OK_FRACTION = 0.2
MAX_DISCARDED_FRAMES = 10
STATS = ("mean", "median")
FEATURE_NAMES = tuple(f"{roi}_{stat}_{axis}" for roi in ROI_NAMES for stat in STATS for axis in "xy")
REAL, FAKE = 0, 1


@dataclass
class AnchorSeries:
    """28 x T cumulative anchor positions in face-size units.

    Rows come in ROI order, four per ROI: mean_x, mean_y, median_x, median_y.
    """

    values: np.ndarray
    fps: float = DEFAULT_FPS
    video_id: str = ""
    start_frame: int = 0
    label: int | None = None
    eval_only: bool = False

    def __post_init__(self):
        # C order keeps row reductions (and so windows) independent of how the array was built
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != N_FEATURES or self.values.shape[1] < 1:
            raise ShapeError(f"anchor series must be 28 x T with T >= 1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InputError("anchor series contains non-finite values")
        if self.fps <= 0:
            raise InputError("fps must be positive")

    @property
    def T(self):
        return self.values.shape[1]


@dataclass
class TrajectorySample:
    x: np.ndarray
    label: int | None = None
    offset: int = 0
    video_id: str = ""
    eval_only: bool = False

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.shape != (N_FEATURES, WINDOW):
            raise ShapeError(f"sample must be 28 x 64, got {self.x.shape}")


def _fmean(values):
    return math.fsum(values) / len(values)


def _median(values):
    s = sorted(values)
    n = len(s)
    mid = n // 2
    return s[mid] if n % 2 else (s[mid - 1] + s[mid]) / 2


def anchor_step(flows) -> np.ndarray:
    """Mean and per-axis median of retained flow vectors.

    Returns ``[mean_x, mean_y, median_x, median_y]``. The mean uses a
    correctly rounded sum so that it does not depend on point order.
    """
    flows = np.asarray(flows, dtype=np.float64).reshape(-1, 2)
    if len(flows) == 0:
        raise EmptyRegion("no retained points in region")
    xs = flows[:, 0].tolist()
    ys = flows[:, 1].tolist()
    return np.array([_fmean(xs), _fmean(ys), _median(xs), _median(ys)])


@dataclass
class FrameResult:
    frame_index: int
    captured: bool = True
    has_landmarks: bool = True
    n_seeded: int = 0
    n_ok: int = 0
    step: np.ndarray | None = None  # 7 x 4 anchor displacements, pixels
    rect_size: tuple | None = None  # (w, h) of the source frame's face rect


def validate_frame(res: FrameResult) -> bool:
    """True if the frame may contribute a displacement step."""
    if not res.captured or not res.has_landmarks or res.n_seeded <= 0:
        return False
    # integer form of n_ok / n_seeded >= 0.2
    return 5 * res.n_ok >= res.n_seeded


@dataclass
class Clip:
    start: int  # index into the per-frame step list
    stop: int
    eval_only: bool = False


def plan_clips(valid, max_discarded=MAX_DISCARDED_FRAMES) -> list[Clip]:
    """Decide which step ranges of a video form usable series.

    With at most ``max_discarded`` invalid frames the whole video is one
    clip (invalid frames later contribute a zero step). Otherwise the video
    is split into maximal runs of valid frames, usable for evaluation only.
    """
    valid = [bool(v) for v in valid]
    n_bad = valid.count(False)
    if not any(valid):
        return []
    if n_bad <= max_discarded:
        return [Clip(0, len(valid))]
    clips = []
    start = None
    for i, v in enumerate(valid + [False]):
        if v and start is None:
            start = i
        elif not v and start is not None:
            clips.append(Clip(start, i, eval_only=True))
            start = None
    return clips


def build_series(steps, rects, fps=DEFAULT_FPS, video_id="", start_frame=0, label=None,
                 eval_only=False) -> AnchorSeries:
    """Cumulative anchor positions from per-frame pixel displacements.

    ``steps`` is ``(T, 7, 4)`` or ``(T, 28)`` in pixels; ``rects`` gives the
    face-rect ``(w, h)`` (or ``(x, y, w, h)``) of each step's source frame.
    x rows are divided by w, y rows by h, then summed cumulatively.
    """
    steps = np.asarray(steps, dtype=np.float64)
    if steps.ndim == 3:
        steps = steps.reshape(len(steps), -1)
    if steps.ndim != 2 or steps.shape[1] != N_FEATURES:
        raise ShapeError(f"steps must be T x 28 (or T x 7 x 4), got {steps.shape}")
    if len(steps) < 1:
        raise TooShort("need at least two consecutive valid frames")
    rects = np.asarray(rects, dtype=np.float64).reshape(len(steps), -1)
    w, h = rects[:, -2], rects[:, -1]
    if np.any(w <= 0) or np.any(h <= 0):
        raise InputError("face rect sizes must be positive")
    scale = np.empty_like(steps)
    scale[:, 0::2] = 1.0 / w[:, None]
    scale[:, 1::2] = 1.0 / h[:, None]
    pos = np.cumsum(steps * scale, axis=0)
    return AnchorSeries(pos.T.copy(), fps, video_id, start_frame, label, eval_only)


def stride_for(fps) -> int:
    """Frames per second rounded half-up; the window hop."""
    return max(1, int(math.floor(fps + 0.5)))


def window_offsets(T, fps, window=WINDOW) -> list[int]:
    return list(range(0, T - window + 1, stride_for(fps))) if T >= window else []


def normalize(window) -> np.ndarray:
    """Row-wise z-score with population std; near-constant rows become zero."""
    w = np.ascontiguousarray(window, dtype=np.float64)
    mu = w.mean(axis=-1, keepdims=True)
    c = w - mu
    sd = np.sqrt(np.mean(c * c, axis=-1, keepdims=True))
    flat = sd < 1e-12
    return np.where(flat, 0.0, c / np.where(flat, 1.0, sd))


def window_samples(series: AnchorSeries, window=WINDOW) -> list[TrajectorySample]:
    if series.fps <= 0:
        raise InputError("fps must be positive")
    return [
        TrajectorySample(normalize(series.values[:, o:o + window]), series.label, o,
                         series.video_id, series.eval_only)
        for o in window_offsets(series.T, series.fps, window)
    ]


# --- storage ---------------------------------------------------------------

def write_series_csv(path, series: AnchorSeries) -> None:
    """One column per feature (header = feature names), one row per frame.

    The sidecar ``<path>.json`` carries fps, video id, label and start frame.
    Values are written with ``repr`` so they round-trip bit-exactly.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(FEATURE_NAMES)
        for col in series.values.T:
            wr.writerow([repr(float(v)) for v in col])
    meta = {"fps": series.fps, "video_id": series.video_id, "label": series.label,
            "start_frame": series.start_frame, "eval_only": series.eval_only}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1))


def read_series_csv(path) -> AnchorSeries:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != FEATURE_NAMES:
        raise InputError(f"{path}: header does not match the 28 feature names")
    values = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).T
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return AnchorSeries(values.reshape(N_FEATURES, -1), meta.get("fps", DEFAULT_FPS),
                        meta.get("video_id", path.stem), meta.get("start_frame", 0),
                        meta.get("label"), meta.get("eval_only", False))


@dataclass
class SampleSet:
    """Windowed samples as one contiguous ``(n, 28, 64)`` array plus metadata."""

    x: np.ndarray
    labels: np.ndarray
    video_ids: list
    offsets: np.ndarray
    eval_only: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1, N_FEATURES, WINDOW)
        n = len(self.x)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        self.offsets = np.asarray(self.offsets, dtype=np.int64).reshape(n)
        self.video_ids = list(self.video_ids)
        if self.eval_only is None:
            self.eval_only = np.zeros(n, dtype=bool)
        self.eval_only = np.asarray(self.eval_only, dtype=bool).reshape(n)

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        x = np.stack([s.x for s in samples]) if samples else np.empty((0, N_FEATURES, WINDOW))
        lab = [(-1 if s.label is None else s.label) for s in samples]
        return cls(x, lab, [s.video_id for s in samples], [s.offset for s in samples],
                   [s.eval_only for s in samples])

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        return cls(np.concatenate([s.x for s in sets]), np.concatenate([s.labels for s in sets]),
                   [v for s in sets for v in s.video_ids], np.concatenate([s.offsets for s in sets]),
                   np.concatenate([s.eval_only for s in sets]))

    def subset(self, idx):
        idx = np.asarray(idx)
        return SampleSet(self.x[idx], self.labels[idx], [self.video_ids[i] for i in idx],
                         self.offsets[idx], self.eval_only[idx])

    def samples(self):
        for i in range(len(self)):
            lab = int(self.labels[i])
            yield TrajectorySample(self.x[i], None if lab < 0 else lab, int(self.offsets[i]),
                                   self.video_ids[i], bool(self.eval_only[i]))


def save_samples(manifest_path, sset: SampleSet) -> None:
    """Manifest JSON plus a little-endian float64 blob (sample-major, row-major)."""
    manifest_path = Path(manifest_path)
    blob = manifest_path.with_suffix(".f64")
    np.ascontiguousarray(sset.x, dtype="<f8").tofile(blob)
    manifest = {
        "format": "facetraj-samples",
        "version": 1,
        "dtype": "<f8",
        "shape": [len(sset), N_FEATURES, WINDOW],
        "layout": "sample-major, row-major",
        "features": list(FEATURE_NAMES),
        "blob": blob.name,
        "samples": [
            {"video_id": v, "label": (None if l < 0 else int(l)), "offset": int(o), "eval_only": bool(e)}
            for v, l, o, e in zip(sset.video_ids, sset.labels, sset.offsets, sset.eval_only)
        ],
    }
    manifest_path.write_text(json.dumps(manifest))


def load_samples(manifest_path) -> SampleSet:
    manifest_path = Path(manifest_path)
    m = json.loads(manifest_path.read_text())
    if m.get("format") != "facetraj-samples":
        raise InputError(f"{manifest_path}: not a sample manifest")
    n = m["shape"][0]
    x = np.fromfile(manifest_path.parent / m["blob"], dtype="<f8")
    if x.size != n * N_FEATURES * WINDOW:
        raise InputError(f"{manifest_path}: blob size does not match manifest shape")
    recs = m["samples"]
    return SampleSet(
        x.astype(np.float64).reshape(n, N_FEATURES, WINDOW),
        [(-1 if r["label"] is None else r["label"]) for r in recs],
        [r["video_id"] for r in recs],
        [r["offset"] for r in recs],
        [r.get("eval_only", False) for r in recs],
    )
