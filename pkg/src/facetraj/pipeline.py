"""Frames + landmarks -> anchor series: ROI grids, FB tracking, screening, validity."""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flow, geom
from .errors import DegenerateLandmarks, InputError, MisalignedLandmarks, MissingFrame
from .traj import (DEFAULT_FPS, MAX_DISCARDED_FRAMES, FrameResult, anchor_step, build_series, plan_clips,
                   validate_frame)

_FRAME_NAME = re.compile(r"^(\d{6})\.pgm$")


def list_frames(frames_dir) -> list[Path]:
    """``%06d.pgm`` files of a directory in index order; indices must run 0..N-1."""
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise InputError(f"{frames_dir}: not a directory")
    found = {}
    for p in frames_dir.iterdir():
        m = _FRAME_NAME.match(p.name)
        if m:
            found[int(m.group(1))] = p
    if not found:
        return []
    n = max(found) + 1
    missing = [i for i in range(n) if i not in found]
    if missing:
        raise MissingFrame(f"{frames_dir}: frame {missing[0]:06d}.pgm is missing")
    return [found[i] for i in range(n)]


def track_frame_pair(prev, nxt, lm: geom.LandmarkFrame, index, **lk) -> FrameResult:
    """Anchor displacements for one frame transition, seeded on ``prev``.

    A region whose screened point set is empty makes the frame invalid.
    """
    res = FrameResult(index, rect_size=(lm.face_rect[2], lm.face_rect[3]))
    try:
        rois = geom.compute_rois(lm)
    except DegenerateLandmarks:
        res.has_landmarks = False
        return res
    grids = geom.seed_all(rois, lm)
    sizes = [len(g) for g in grids]
    res.n_seeded = sum(sizes)
    if res.n_seeded == 0:
        return res
    tps = flow.track_forward_backward(prev, nxt, np.concatenate(grids), **lk)
    res.n_ok = int(np.count_nonzero(tps.ok))
    step = np.empty((len(grids), 4))
    start = 0
    for r, size in enumerate(sizes):
        sub = flow.TrackedPointSet(*(np.asarray(a)[start:start + size] for a in
                                     (tps.origin, tps.forward, tps.back, tps.status, tps.fb_error)))
        start += size
        keep = flow.screen_points(sub)
        if keep.size == 0:
            return res
        step[r] = anchor_step(sub.flow[keep])
    res.step = step
    return res


@dataclass
class ExtractResult:
    series: list = field(default_factory=list)  # AnchorSeries, one per clip
    frames: list = field(default_factory=list)  # FrameResult per transition
    clips: list = field(default_factory=list)
    discarded: list = field(default_factory=list)  # frame indices
    warnings: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "transitions": len(self.frames),
            "discarded_frames": self.discarded,
            "clips": [{"start": c.start, "stop": c.stop, "eval_only": c.eval_only} for c in self.clips],
            "warnings": self.warnings,
        }


def series_from_results(results, fps=DEFAULT_FPS, video_id="", label=None,
                        max_discarded=MAX_DISCARDED_FRAMES):
    """Split per-transition results into clips and build their anchor series.

    Returns ``(series list, clips, discarded frame indices)``. In a whole
    video clip an invalid transition contributes a zero step.
    """
    valid = [validate_frame(r) and r.step is not None for r in results]
    discarded = [r.frame_index for r, v in zip(results, valid) if not v]
    clips = plan_clips(valid, max_discarded)
    rect_fallback = next((r.rect_size for r, v in zip(results, valid) if v), (1.0, 1.0))
    out = []
    for clip in clips:
        part = results[clip.start:clip.stop]
        ok = valid[clip.start:clip.stop]
        steps = np.stack([r.step if v else np.zeros((7, 4)) for r, v in zip(part, ok)])
        rects = [r.rect_size if v else rect_fallback for r, v in zip(part, ok)]
        start_frame = part[0].frame_index - 1
        vid = video_id if len(clips) == 1 and not clip.eval_only else f"{video_id}@{start_frame}"
        out.append(build_series(steps, rects, fps, vid, start_frame, label, clip.eval_only))
    return out, clips, discarded


def extract(frames_dir, landmarks_path, fps=DEFAULT_FPS, video_id=None, label=None, **lk) -> ExtractResult:
    """Run ROI seeding, forward-backward tracking and screening over a frame directory.

    Frame ``i``'s landmarks seed the transition ``i -> i+1``. The landmark
    file must hold one record per frame index.
    """
    frames = list_frames(frames_dir)
    video_id = Path(frames_dir).name if video_id is None else video_id
    landmarks = geom.read_landmarks(landmarks_path)
    if sorted(landmarks) != list(range(len(frames))):
        raise MisalignedLandmarks(
            f"{landmarks_path}: {len(landmarks)} landmark records for {len(frames)} frames "
            "(need one record per frame index)")
    result = ExtractResult()
    if len(frames) < 2:
        result.warnings.append("fewer than two frames; nothing to track")
        warnings.warn(result.warnings[-1])
        return result
    prev = _read(frames[0])
    for i in range(1, len(frames)):
        nxt = _read(frames[i])
        lm = landmarks[i - 1]
        if prev is None or nxt is None:
            res = FrameResult(i, captured=False)
        elif lm is None:
            res = FrameResult(i, has_landmarks=False)
        else:
            res = track_frame_pair(prev, nxt, lm, i, **lk)
        result.frames.append(res)
        prev = nxt
    result.series, result.clips, result.discarded = series_from_results(result.frames, fps, video_id, label)
    if not result.series:
        result.warnings.append(f"{video_id}: every frame was discarded; no trajectory produced")
        warnings.warn(result.warnings[-1])
    return result


def _read(path):
    try:
        return flow.read_pgm(path)
    except InputError:
        return None
