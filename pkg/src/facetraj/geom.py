"""Facial regions of interest and the uniform tracking grid.

Landmarks follow the 68-point iBUG/dlib convention. The seven regions are
convex hulls of fixed landmark subsets, except the forehead, which is a
quadrilateral extruded upward from the brows by a fraction of the face
height so that it scales with the face.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import shapely
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateLandmarks, EmptyGrid, InputError

ROI_NAMES = (
    "forehead",
    "left_eye",
    "right_eye",
    "nose",
    "left_cheek",
    "right_cheek",
    "mouth",
)

# landmark subsets whose convex hull defines each region
ROI_LANDMARKS = {
    "left_eye": tuple(range(17, 22)) + tuple(range(36, 42)),
    "right_eye": tuple(range(22, 27)) + tuple(range(42, 48)),
    "nose": tuple(range(27, 36)),
    "left_cheek": (1, 2, 3, 4, 31, 36, 48),
    "right_cheek": (12, 13, 14, 15, 35, 45, 54),
    "mouth": (8,) + tuple(range(48, 68)),
}

FOREHEAD_BROW_POINTS = (19, 24)
FOREHEAD_LIFT = 0.35  # fraction of face-rect height
GRID_DIVISIONS = 40
MIN_REGION_AREA = 4.0  # px^2


@dataclass(frozen=True)
class LandmarkFrame:
    points: np.ndarray
    face_rect: tuple
    frame_index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (68, 2):
            raise InputError(f"expected 68 landmark points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("landmarks contain non-finite values")
        rect = tuple(float(v) for v in self.face_rect)
        if len(rect) != 4 or rect[2] <= 0 or rect[3] <= 0:
            raise InputError(f"face rect must be (x, y, w, h) with w, h > 0, got {rect}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "face_rect", rect)

    @property
    def width(self):
        return self.face_rect[2]

    @property
    def height(self):
        return self.face_rect[3]

    def transformed(self, scale=1.0, shift=(0.0, 0.0)):
        """Copy with points and rect mapped by ``p -> scale * p + shift``."""
        x, y, w, h = self.face_rect
        sx, sy = shift
        return LandmarkFrame(
            self.points * scale + np.asarray(shift, dtype=np.float64),
            (x * scale + sx, y * scale + sy, w * scale, h * scale),
            self.frame_index,
        )


@dataclass(frozen=True)
class RoiSet:
    polygons: tuple
    names: tuple = field(default=ROI_NAMES)

    def __post_init__(self):
        if len(self.polygons) != 7 or tuple(self.names) != ROI_NAMES:
            raise InputError("RoiSet needs exactly the seven canonical regions")

    def __getitem__(self, name) -> np.ndarray:
        return self.polygons[self.names.index(name)]

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(zip(self.names, self.polygons))

    def __len__(self):
        return len(self.polygons)


def _hull(points: np.ndarray, indices) -> np.ndarray:
    sub = points[list(indices)]
    try:
        hull = ConvexHull(sub)
    except QhullError:
        return None
    order = list(hull.vertices)  # counter-clockwise
    # start at the lowest landmark index so the vertex list is canonical
    start = min(range(len(order)), key=lambda k: indices[order[k]])
    order = order[start:] + order[:start]
    return sub[order]


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def compute_rois(lm: LandmarkFrame) -> RoiSet:
    """Build the seven ROI polygons for one frame, in ``ROI_NAMES`` order."""
    pts = lm.points
    lift = np.array([0.0, FOREHEAD_LIFT * lm.height])
    left, right = pts[FOREHEAD_BROW_POINTS[0]], pts[FOREHEAD_BROW_POINTS[1]]
    polys = [np.array([left, right, right - lift, left - lift])]
    for name in ROI_NAMES[1:]:
        polys.append(_hull(pts, ROI_LANDMARKS[name]))
    for name, poly in zip(ROI_NAMES, polys):
        if poly is None or polygon_area(poly) < MIN_REGION_AREA:
            raise DegenerateLandmarks(f"region {name!r} collapses (frame {lm.frame_index})")
    return RoiSet(tuple(polys))


def grid_spacing(lm: LandmarkFrame) -> tuple[float, float]:
    return lm.width / GRID_DIVISIONS, lm.height / GRID_DIVISIONS


def seed_tracking_grid(roi: np.ndarray, lm: LandmarkFrame) -> np.ndarray:
    """Lattice points strictly inside ``roi``, spaced w/40 by h/40.

    The lattice is cell-centred on the polygon's bounding box: the first
    point sits half a step in from the top-left corner. Points are returned
    row by row (ascending y, then x) as an ``(n, 2)`` array.
    """
    roi = np.asarray(roi, dtype=np.float64)
    sx, sy = grid_spacing(lm)
    x0, y0 = roi.min(axis=0)
    x1, y1 = roi.max(axis=0)
    nx = int(np.floor((x1 - x0) / sx + 0.5)) + 1
    ny = int(np.floor((y1 - y0) / sy + 0.5)) + 1
    xs = x0 + (np.arange(nx) + 0.5) * sx
    ys = y0 + (np.arange(ny) + 0.5) * sy
    gx, gy = np.meshgrid(xs, ys)
    gx, gy = gx.ravel(), gy.ravel()
    inside = shapely.contains_xy(shapely.Polygon(roi), gx, gy)
    if not inside.any():
        raise EmptyGrid("no grid point falls inside the region")
    return np.column_stack([gx[inside], gy[inside]])


def seed_all(rois: RoiSet, lm: LandmarkFrame) -> list[np.ndarray]:
    """Grid points per region; regions too small for the grid get an empty array."""
    out = []
    for _, poly in rois:
        try:
            out.append(seed_tracking_grid(poly, lm))
        except EmptyGrid:
            out.append(np.empty((0, 2)))
    return out


def read_landmarks(path) -> dict[int, LandmarkFrame | None]:
    """Read landmark JSON Lines into ``{frame: LandmarkFrame or None}``.

    A record whose ``points`` is missing or null means no face was found.
    """
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                frame = int(rec["frame"])
            except (ValueError, KeyError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: bad landmark record ({exc})") from None
            points = rec.get("points")
            rect = rec.get("rect")
            out[frame] = None if points is None or rect is None else LandmarkFrame(points, rect, frame)
    return out


def write_landmarks(path, frames) -> None:
    with open(path, "w") as fh:
        for lm in frames:
            rec = {"frame": lm.frame_index, "rect": list(lm.face_rect), "points": lm.points.tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_landmark_json(path) -> LandmarkFrame:
    rec = json.loads(Path(path).read_text())
    return LandmarkFrame(rec["points"], rec["rect"], rec.get("frame", 0))
