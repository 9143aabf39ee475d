"""Poses, quaternions, the picking ring and angular-interval arithmetic on it.

Vectors are plain ``numpy`` arrays of shape (3,). Quaternions are stored
scalar-first, ``(w, x, y, z)``. The camera looks along its local +z axis,
local +x points right in the image and local +y points down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
WORLD_UP = np.array([0.0, 0.0, 1.0])
WORLD_X = np.array([1.0, 0.0, 0.0])


class GeometryError(ValueError):
    pass


class DegenerateDirection(GeometryError):
    pass


class DegenerateUp(GeometryError):
    pass


class OnAxis(GeometryError):
    pass


class EmptySamplingSpace(GeometryError):
    pass


def vec3(v: Sequence[float]) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"non-finite vector {v!r}")
    return a


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise GeometryError("cannot normalize a zero vector")
    if abs(n - 1.0) <= 4 * np.finfo(float).eps:
        return v  # keeps already-unit vectors bit-identical across reloads
    return v / n


# --------------------------------------------------------------------------
# quaternions
# --------------------------------------------------------------------------


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z), w >= 0."""
    m = np.asarray(R, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_rotate(q, v) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def look_at_quaternion(origin, target, up_hint=WORLD_UP) -> np.ndarray:
    """Orientation whose camera +z axis points from ``origin`` to ``target``.

    Roll is fixed by ``up_hint``: image "down" (+y) is kept opposite to it.
    Raises DegenerateDirection when the points coincide; when the view
    direction is parallel to ``up_hint`` world +x is used instead.
    """
    q, _ = _look_at(origin, target, up_hint)
    return q


def _look_at(origin, target, up_hint):
    d = np.asarray(target, dtype=float) - np.asarray(origin, dtype=float)
    dist = np.linalg.norm(d)
    if dist <= 1e-6:
        raise DegenerateDirection(f"look-at from {origin} to {target}")
    forward = d / dist
    try:
        right = _right_axis(forward, up_hint)
        fell_back = False
    except DegenerateUp:
        right = _right_axis(forward, WORLD_X)
        fell_back = True
    down = np.cross(forward, right)
    R = np.column_stack([right, down, forward])
    return quat_from_matrix(R), fell_back


def _right_axis(forward, up):
    r = np.cross(forward, np.asarray(up, dtype=float))
    n = np.linalg.norm(r)
    if n < 1e-9:
        raise DegenerateUp("view direction parallel to up hint")
    return r / n


@dataclass(frozen=True)
class Viewpoint:
    """Camera pose: world position plus unit quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise GeometryError(f"orientation is not a unit quaternion: {q}")
        object.__setattr__(self, "orientation", q)

    @classmethod
    def looking_at(cls, position, target, up_hint=WORLD_UP) -> "Viewpoint":
        return cls(vec3(position), look_at_quaternion(position, target, up_hint))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def as_vector(self) -> np.ndarray:
        """The seven-element (x, y, z, qw, qx, qy, qz) form."""
        return np.concatenate([self.position, self.orientation])

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "orientation": self.orientation.tolist()}


# --------------------------------------------------------------------------
# fruit pose and picking ring
# --------------------------------------------------------------------------

MAX_AXIS_TILT = math.radians(30.0)


def clamp_axis(axis, max_tilt: float = MAX_AXIS_TILT) -> np.ndarray:
    """Rotate ``axis`` toward +z, keeping its azimuth, until its tilt is <= max_tilt."""
    a = normalize(axis)
    if a[2] < 0:
        a = -a
    tilt = math.acos(min(1.0, max(-1.0, a[2])))
    if tilt <= max_tilt:
        return a
    horiz = np.array([a[0], a[1], 0.0])
    horiz /= np.linalg.norm(horiz)
    return math.cos(max_tilt) * WORLD_UP + math.sin(max_tilt) * horiz


@dataclass(frozen=True)
class FruitPose:
    """Fruit centre and (unit, at most 30 degrees from vertical) axis."""

    position: np.ndarray
    axis: np.ndarray = WORLD_UP

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        object.__setattr__(self, "axis", clamp_axis(vec3(self.axis)))

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "axis": self.axis.tolist()}


@dataclass(frozen=True)
class PickingRing:
    center: np.ndarray
    normal: np.ndarray
    radius: float = 0.21

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"ring radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "normal", normalize(vec3(self.normal)))

    @property
    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        # theta = 0 is world +x projected into the ring plane (world +y if +x is the normal)
        n = self.normal
        e1 = WORLD_X - np.dot(WORLD_X, n) * n
        if np.linalg.norm(e1) < 1e-9:
            y = np.array([0.0, 1.0, 0.0])
            e1 = y - np.dot(y, n) * n
        e1 = e1 / np.linalg.norm(e1)
        return e1, np.cross(n, e1)


def ring_from_pose(fruit, radius: float = 0.21) -> PickingRing:
    """Picking ring centred on the fruit, in the plane normal to its axis."""
    return PickingRing(fruit.position, fruit.axis, radius)


def ring_point(ring: PickingRing, theta: float) -> np.ndarray:
    e1, e2 = ring.basis
    return ring.center + ring.radius * (math.cos(theta) * e1 + math.sin(theta) * e2)


def project_to_ring(ring: PickingRing, p) -> float:
    """Angle of the ring point closest to ``p``, in [0, 2*pi)."""
    e1, e2 = ring.basis
    d = np.asarray(p, dtype=float) - ring.center
    a, b = float(np.dot(d, e1)), float(np.dot(d, e2))
    if math.hypot(a, b) <= 1e-9:
        raise OnAxis(f"point {p} lies on the ring axis")
    return math.atan2(b, a) % TWO_PI


def wrap_angle(theta: float) -> float:
    """Wrap to [0, 2*pi)."""
    t = theta % TWO_PI
    return 0.0 if t >= TWO_PI else t


def signed_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    t = (theta + math.pi) % TWO_PI - math.pi
    return math.pi if t == -math.pi else t


# --------------------------------------------------------------------------
# arc sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ArcSet:
    """Disjoint, sorted half-open angle intervals [lo, hi) within [0, 2*pi]."""

    intervals: tuple[tuple[float, float], ...] = ()

    @classmethod
    def full(cls) -> "ArcSet":
        return cls(((0.0, TWO_PI),))

    @classmethod
    def sector(cls, center: float, width: float) -> "ArcSet":
        """Arc of total ``width`` centred on angle ``center``."""
        if width >= TWO_PI:
            return cls.full()
        blocked_start = wrap_angle(center + width / 2.0)
        return subtract_interval(cls.full(), blocked_start, blocked_start + TWO_PI - width)

    @property
    def measure(self) -> float:
        return sum(hi - lo for lo, hi in self.intervals)

    def __bool__(self) -> bool:
        return self.measure > 0.0

    def contains(self, theta: float) -> bool:
        t = wrap_angle(theta)
        return any(lo <= t < hi for lo, hi in self.intervals)


def _split(lo: float, hi: float) -> list[tuple[float, float]]:
    """Split an interval that may wrap past 2*pi into pieces inside [0, 2*pi]."""
    if hi - lo >= TWO_PI:
        return [(0.0, TWO_PI)]
    lo_w = wrap_angle(lo)
    hi_w = lo_w + (hi - lo)
    if hi_w <= TWO_PI:
        return [(lo_w, hi_w)]
    return [(lo_w, TWO_PI), (0.0, hi_w - TWO_PI)]


def subtract_interval(arcs: ArcSet, lo: float, hi: float) -> ArcSet:
    """Remove the blocked interval [lo, hi) from ``arcs``.

    ``hi`` may exceed 2*pi; the blocked interval then wraps through zero.
    """
    if hi <= lo:
        return arcs
    pieces = list(arcs.intervals)
    for blo, bhi in _split(lo, hi):
        out = []
        for alo, ahi in pieces:
            if bhi <= alo or blo >= ahi:
                out.append((alo, ahi))
                continue
            if alo < blo:
                out.append((alo, blo))
            if bhi < ahi:
                out.append((bhi, ahi))
        pieces = out
    return ArcSet(tuple(sorted(p for p in pieces if p[1] - p[0] > 1e-12)))


def uniform_equidistant_sample(arcs: ArcSet, n: int) -> list[float]:
    """``n`` angles at arc-length fractions (i + 0.5)/n of the remaining space."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = arcs.measure
    if total <= 0.0:
        raise EmptySamplingSpace("sampling space is empty")
    out = []
    for i in range(n):
        s = (i + 0.5) / n * total
        for lo, hi in arcs.intervals:
            if s < hi - lo:
                out.append(lo + s)
                break
            s -= hi - lo
        else:
            lo, hi = arcs.intervals[-1]
            out.append(hi - 1e-12)
    return out
