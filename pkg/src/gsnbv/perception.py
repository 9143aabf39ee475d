"""Sensing outputs derived from one observation.

Fruit contour and surrounding curve, discoverability, occlusion rate,
picking score, fruit pose estimation/update and obstacle points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import FruitPose, clamp_axis, normalize
from .scene import CameraModel, Observation, SemanticClass

PICK_THRESHOLD = 0.9
DISCOVER_PX = 5
D_OFFSET = 0.06
POSE_GAIN = 0.7

_CROSS = ndimage.generate_binary_structure(2, 1)


class PerceptionError(ValueError):
    pass


class EmptyMask(PerceptionError):
    pass


class EmptyCurve(PerceptionError):
    pass


class TooFewPoints(PerceptionError):
    pass


@dataclass(frozen=True)
class CurvePair:
    contour: np.ndarray  # (N, 2) row, col
    surrounding: np.ndarray  # (M, 2) row, col


@dataclass(frozen=True)
class PickReport:
    s_dis: int
    s_occ: float
    s_pick: float
    d_fmin: float

    @property
    def pickable(self) -> bool:
        return self.s_pick > PICK_THRESHOLD

    @property
    def unoccluded(self) -> float:
        return 1.0 - self.s_occ


@dataclass
class ObstacleSet:
    """Append-only world-frame obstacle points, with per-iteration batches."""

    batches: list = field(default_factory=list)

    def extend(self, pts) -> None:
        self.batches.append(np.asarray(pts, dtype=float).reshape(-1, 3))

    @property
    def points(self) -> np.ndarray:
        if not self.batches:
            return np.empty((0, 3))
        return np.concatenate(self.batches)

    @property
    def latest(self) -> np.ndarray:
        return self.batches[-1] if self.batches else np.empty((0, 3))

    def __len__(self) -> int:
        return sum(len(b) for b in self.batches)


def _boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask."""
    inner = ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)
    return mask & ~inner


def _disc(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def extract_curves(mask: np.ndarray, dilation_px: int = 3) -> CurvePair:
    """Fruit contour C and the surrounding curve R around it.

    R is the boundary of the mask dilated by a disc of ``dilation_px``,
    restricted to pixels outside the original mask.
    """
    if dilation_px < 1:
        raise ValueError("dilation must be at least one pixel")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("no fruit pixels")
    contour = _boundary(mask)
    dilated = ndimage.binary_dilation(mask, structure=_disc(dilation_px))
    # pixels on the image border count as boundary of the dilated mask too
    padded = np.pad(dilated, 1)
    surround = _boundary(padded)[1:-1, 1:-1] & ~mask
    return CurvePair(np.argwhere(contour), np.argwhere(surround))


def discoverability(semantic: np.ndarray, max_px: float = DISCOVER_PX) -> int:
    """1 if fruit and peduncle are both visible and within ``max_px`` pixels."""
    fruit = semantic == SemanticClass.AVOCADO
    ped = semantic == SemanticClass.PEDUNCLE
    if not fruit.any() or not ped.any():
        return 0
    dist = ndimage.distance_transform_edt(~fruit)
    return int(dist[ped].min() <= max_px)


def min_fruit_depth(obs: Observation) -> float:
    d = obs.depth[obs.mask(SemanticClass.AVOCADO) & obs.valid]
    if d.size == 0:
        raise EmptyMask("no fruit pixels with valid depth")
    return float(d.min())


def occlusion_rate(surrounding: np.ndarray, depth: np.ndarray, d_fmin: float, d_offset: float = D_OFFSET) -> float:
    """Fraction of surrounding-curve pixels closer than d_fmin + d_offset.

    Pixels without a depth reading never count as occluding.
    """
    surrounding = np.asarray(surrounding).reshape(-1, 2)
    if len(surrounding) == 0:
        raise EmptyCurve("surrounding curve is empty")
    d = depth[surrounding[:, 0], surrounding[:, 1]]
    with np.errstate(invalid="ignore"):
        occluding = np.isfinite(d) & (d < d_fmin + d_offset)
    return float(occluding.sum()) / len(surrounding)


def picking_score(s_dis: int, s_occ: float) -> float:
    return s_dis * (1.0 - s_occ)


def pick_report(obs: Observation, dilation_px: int = 3, d_offset: float = D_OFFSET) -> tuple[PickReport, CurvePair | None]:
    """Picking report for an observation; unseen fruit gives s_occ = 1."""
    fruit = obs.mask(SemanticClass.AVOCADO)
    s_dis = discoverability(obs.semantic)
    try:
        d_fmin = min_fruit_depth(obs)
        curves = extract_curves(fruit, dilation_px)
    except EmptyMask:
        return PickReport(s_dis, 1.0, 0.0, float("nan")), None
    s_occ = occlusion_rate(curves.surrounding, obs.depth, d_fmin, d_offset)
    return PickReport(s_dis, s_occ, picking_score(s_dis, s_occ), d_fmin), curves


def estimate_fruit_pose(obs: Observation, camera: CameraModel) -> FruitPose:
    """Fruit pose from the back-projected fruit pixels.

    Points farther from the raw centroid than mean + one standard deviation
    of those distances are dropped; the position is the mean of the rest and
    the axis points from the lowest to the highest survivor.
    """
    sel = obs.mask(SemanticClass.AVOCADO) & obs.valid
    rows, cols = np.nonzero(sel)
    if len(rows) < 2:
        raise TooFewPoints(f"{len(rows)} fruit points")
    pts = camera.backproject(obs.pose, rows, cols, obs.depth[rows, cols])
    return fruit_pose_from_points(pts)


def fruit_pose_from_points(pts: np.ndarray) -> FruitPose:
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        raise TooFewPoints(f"{len(pts)} fruit points")
    dist = np.linalg.norm(pts - pts.mean(axis=0), axis=1)
    keep = pts[dist <= dist.mean() + dist.std()]
    # argmax/argmin return the first occurrence, i.e. row-major pixel order
    top = keep[np.argmax(keep[:, 2])]
    bottom = keep[np.argmin(keep[:, 2])]
    span = top - bottom
    axis = normalize(span) if np.linalg.norm(span) > 1e-12 else np.array([0.0, 0.0, 1.0])
    return FruitPose(keep.mean(axis=0), axis)


def update_fruit_pose(prev: FruitPose, new: FruitPose, k: float = POSE_GAIN) -> FruitPose:
    """prev + k * (new - prev) for position and axis; axis renormalised and clamped."""
    if not 0.0 < k <= 1.0:
        raise ValueError("gain k must be in (0, 1]")
    if k == 1.0:
        return new
    pos = prev.position + k * (new.position - prev.position)
    axis = prev.axis + k * (new.axis - prev.axis)
    return FruitPose(pos, clamp_axis(axis))


def extract_obstacle_points(obs: Observation, surrounding: np.ndarray, d_fmin: float, camera: CameraModel) -> np.ndarray:
    """World points of surrounding-curve pixels with depth strictly below d_fmin."""
    surrounding = np.asarray(surrounding).reshape(-1, 2)
    rows, cols = surrounding[:, 0], surrounding[:, 1]
    d = obs.depth[rows, cols]
    with np.errstate(invalid="ignore"):
        hit = np.isfinite(d) & (d < d_fmin)
    return camera.backproject(obs.pose, rows[hit], cols[hit], d[hit])
