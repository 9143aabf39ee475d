"""Analytic scene and a simulated segmenting depth camera.

The scene is a handful of closed primitives (fruit ellipsoid, peduncle
cylinder, leaf discs, boxes). ``render`` casts one ray per pixel and keeps
the nearest hit, producing an along-ray depth image clipped to the camera's
working range and an exact semantic mask.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .geometry import FruitPose, Viewpoint, normalize, vec3

_EPS = 1e-9


class SemanticClass(enum.IntEnum):
    BACKGROUND = 0
    AVOCADO = 1
    PEDUNCLE = 2


# label value for "no semantic class" in masks and voxel grids
NO_CLASS = 255


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Ellipsoid:
    center: np.ndarray
    semi_axes: np.ndarray
    cls: SemanticClass = SemanticClass.BACKGROUND
    kind = "ellipsoid"

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "semi_axes", vec3(self.semi_axes))
        if np.any(self.semi_axes <= 0):
            raise ValueError("ellipsoid semi-axes must be positive")

    def intersect_many(self, origins, dirs):
        o = (origins - self.center) / self.semi_axes
        d = dirs / self.semi_axes
        a = np.einsum("...i,...i", d, d)
        b = 2.0 * np.einsum("...i,...i", o, d)
        c = np.einsum("...i,...i", o, o) - 1.0
        return _smallest_positive_root(a, b, c)

    def params(self) -> dict:
        return {"center": self.center.tolist(), "semi_axes": self.semi_axes.tolist()}


@dataclass(frozen=True)
class Cylinder:
    """Solid capped cylinder from ``base`` along ``axis`` for ``height``."""

    base: np.ndarray
    axis: np.ndarray
    radius: float
    height: float
    cls: SemanticClass = SemanticClass.BACKGROUND
    kind = "cylinder"

    def __post_init__(self):
        object.__setattr__(self, "base", vec3(self.base))
        object.__setattr__(self, "axis", normalize(vec3(self.axis)))
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("cylinder radius and height must be positive")

    def intersect_many(self, origins, dirs):
        k = self.axis
        o = origins - self.base
        ok = o @ k
        dk = dirs @ k
        o_perp = o - ok[..., None] * k
        d_perp = dirs - dk[..., None] * k
        a = np.einsum("...i,...i", d_perp, d_perp)
        b = 2.0 * np.einsum("...i,...i", o_perp, d_perp)
        c = np.einsum("...i,...i", o_perp, o_perp) - self.radius**2
        best = np.full(np.broadcast_shapes(ok.shape, dk.shape), np.inf)
        with np.errstate(invalid="ignore", divide="ignore"):
            disc = b * b - 4 * a * c
            sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
            for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
                h = ok + t * dk
                good = (t > _EPS) & (h >= 0) & (h <= self.height)
                best = np.where(good & (t < best), t, best)
            for h0 in (0.0, self.height):
                t = (h0 - ok) / dk
                p = o_perp + t[..., None] * d_perp
                good = (t > _EPS) & (np.einsum("...i,...i", p, p) <= self.radius**2)
                best = np.where(good & (t < best), t, best)
        return best

    def params(self) -> dict:
        return {
            "base": self.base.tolist(),
            "axis": self.axis.tolist(),
            "radius": self.radius,
            "height": self.height,
        }


@dataclass(frozen=True)
class Disc:
    """Infinitely thin opaque disc (a leaf)."""

    center: np.ndarray
    normal: np.ndarray
    radius: float
    cls: SemanticClass = SemanticClass.BACKGROUND
    kind = "disc"

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "normal", normalize(vec3(self.normal)))
        if self.radius <= 0:
            raise ValueError("disc radius must be positive")

    def intersect_many(self, origins, dirs):
        n = self.normal
        dn = dirs @ n
        with np.errstate(invalid="ignore", divide="ignore"):
            t = ((self.center - origins) @ n) / dn
            p = origins + t[..., None] * dirs - self.center
            good = (np.abs(dn) > 1e-12) & (t > _EPS) & (np.einsum("...i,...i", p, p) <= self.radius**2)
        return np.where(good, t, np.inf)

    def params(self) -> dict:
        return {"center": self.center.tolist(), "normal": self.normal.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    cls: SemanticClass = SemanticClass.BACKGROUND
    kind = "box"

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "half_extents", vec3(self.half_extents))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        if np.any(self.half_extents <= 0):
            raise ValueError("box half extents must be positive")

    def intersect_many(self, origins, dirs):
        # slab test in the box frame
        o = (origins - self.center) @ self.rotation
        d = dirs @ self.rotation
        with np.errstate(invalid="ignore", divide="ignore"):
            inv = 1.0 / d
            t1 = (-self.half_extents - o) * inv
            t2 = (self.half_extents - o) * inv
        t1 = np.nan_to_num(t1, nan=-np.inf)
        t2 = np.nan_to_num(t2, nan=np.inf)
        tnear = np.minimum(t1, t2).max(axis=-1)
        tfar = np.maximum(t1, t2).min(axis=-1)
        hit = tnear <= tfar
        t = np.where(tnear > _EPS, tnear, tfar)
        return np.where(hit & (t > _EPS), t, np.inf)

    def params(self) -> dict:
        return {
            "center": self.center.tolist(),
            "half_extents": self.half_extents.tolist(),
            "rotation": self.rotation.tolist(),
        }


Primitive = Union[Ellipsoid, Cylinder, Disc, Box]
PRIMITIVE_TYPES = {cls.kind: cls for cls in (Ellipsoid, Cylinder, Disc, Box)}


def _smallest_positive_root(a, b, c):
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = b * b - 4.0 * a * c
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
    t = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
    return np.where(np.isnan(t), np.inf, t)


def intersect(origin, direction, prim: Primitive) -> Optional[float]:
    """Distance to the nearest hit of one ray with ``prim``, or None."""
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
        raise ValueError("ray direction must be unit length")
    t = float(prim.intersect_many(np.asarray(origin, dtype=float), direction))
    return None if not math.isfinite(t) else t


# --------------------------------------------------------------------------
# scene
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Scene:
    primitives: tuple
    fruit_truth: FruitPose
    workspace: tuple[np.ndarray, np.ndarray] = (
        np.array([-0.2, -0.585, 0.139]),
        np.array([0.22, -0.135, 0.979]),
    )

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    @property
    def fruit(self) -> Optional[Ellipsoid]:
        return next((p for p in self.primitives if p.cls == SemanticClass.AVOCADO), None)

    @property
    def peduncle(self):
        return next((p for p in self.primitives if p.cls == SemanticClass.PEDUNCLE), None)

    @property
    def occluders(self) -> tuple:
        return tuple(p for p in self.primitives if p.cls == SemanticClass.BACKGROUND)

    def without_occluders(self) -> "Scene":
        return replace(self, primitives=tuple(p for p in self.primitives if p.cls != SemanticClass.BACKGROUND))

    def validate(self) -> None:
        n_fruit = sum(p.cls == SemanticClass.AVOCADO for p in self.primitives)
        n_ped = sum(p.cls == SemanticClass.PEDUNCLE for p in self.primitives)
        if n_fruit != 1 or n_ped != 1:
            raise ValueError(f"scene needs exactly one fruit and one peduncle, got {n_fruit} and {n_ped}")
        fruit, ped = self.fruit, self.peduncle
        if not isinstance(fruit, Ellipsoid) or not isinstance(ped, Cylinder):
            raise ValueError("fruit must be an ellipsoid and peduncle a cylinder")
        top = fruit.center + np.array([0.0, 0.0, fruit.semi_axes[2]])
        if np.linalg.norm(ped.base - top) > 1e-6:
            raise ValueError("peduncle base must touch the top of the fruit")
        lo, hi = self.workspace
        if np.any(fruit.center < lo) or np.any(fruit.center > hi):
            raise ValueError("fruit lies outside the workspace")


# --------------------------------------------------------------------------
# camera
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraModel:
    width: int = 640
    height: int = 480
    fx: float = 320.0 / math.tan(math.radians(34.5))
    fy: float = 320.0 / math.tan(math.radians(34.5))
    cx: float = 320.0
    cy: float = 240.0
    near: float = 0.03
    far: float = 0.72

    def __post_init__(self):
        if not self.near < self.far:
            raise ValueError("camera near clip must be below far clip")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @classmethod
    def from_fov(cls, width=640, height=480, hfov_deg=69.0, near=0.03, far=0.72) -> "CameraModel":
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(width, height, f, f, width / 2.0, height / 2.0, near, far)

    def pixel_grid(self, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Row and column indices of the sampled pixels (row-major)."""
        v, u = np.mgrid[0 : self.height : stride, 0 : self.width : stride]
        return v, u

    def camera_rays(self, rows, cols) -> np.ndarray:
        """Unit ray directions in the camera frame for the given pixels."""
        x = (np.asarray(cols, dtype=float) - self.cx) / self.fx
        y = (np.asarray(rows, dtype=float) - self.cy) / self.fy
        d = np.stack([x, y, np.ones_like(x)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def world_rays(self, pose: Viewpoint, rows, cols) -> np.ndarray:
        return self.camera_rays(rows, cols) @ pose.rotation.T

    def backproject(self, pose: Viewpoint, rows, cols, depth) -> np.ndarray:
        """World points at along-ray distance ``depth`` through the given pixels."""
        dirs = self.world_rays(pose, rows, cols)
        return pose.position + np.asarray(depth, dtype=float)[..., None] * dirs

    def project(self, pose: Viewpoint, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points -> (row, col, z-in-camera)."""
        pc = (np.asarray(points, dtype=float) - pose.position) @ pose.rotation
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            col = self.fx * pc[..., 0] / z + self.cx
            row = self.fy * pc[..., 1] / z + self.cy
        return row, col, z

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("width", "height", "fx", "fy", "cx", "cy", "near", "far")}


@dataclass(frozen=True)
class Observation:
    depth: np.ndarray  # (H, W) along-ray metres, NaN where invalid
    semantic: np.ndarray  # (H, W) uint8 class or NO_CLASS
    pose: Viewpoint

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth)

    def mask(self, cls: SemanticClass) -> np.ndarray:
        return self.semantic == int(cls)


def render(scene: Scene, camera: CameraModel, pose: Viewpoint) -> Observation:
    rows, cols = camera.pixel_grid()
    dirs = camera.world_rays(pose, rows, cols)
    best = np.full(rows.shape, np.inf)
    label = np.full(rows.shape, NO_CLASS, dtype=np.uint8)
    for prim in scene.primitives:
        t = prim.intersect_many(pose.position, dirs)
        closer = t < best
        best = np.where(closer, t, best)
        label[closer] = int(prim.cls)
    valid = (best >= camera.near) & (best <= camera.far)
    depth = np.where(valid, best, np.nan)
    label[~valid] = NO_CLASS
    return Observation(depth, label, pose)


def apply_mask_noise(obs: Observation, dropout_rate: float, rng: np.random.Generator) -> Observation:
    """Independently drop each labelled pixel to NO_CLASS with ``dropout_rate``."""
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if dropout_rate == 0.0:
        return obs
    sem = obs.semantic.copy()
    drop = rng.random(sem.shape) < dropout_rate
    sem[drop & (sem != NO_CLASS)] = NO_CLASS
    return Observation(obs.depth, sem, obs.pose)


# --------------------------------------------------------------------------
# debug export
# --------------------------------------------------------------------------


def write_depth_pgm(obs: Observation, path) -> None:
    """16-bit binary PGM, millimetres, 0 where invalid."""
    mm = np.where(obs.valid, np.round(np.nan_to_num(obs.depth) * 1000.0), 0).astype(">u2")
    h, w = mm.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(mm.tobytes())


def write_semantic_pgm(obs: Observation, path) -> None:
    """8-bit binary PGM holding raw class indices (255 = none)."""
    h, w = obs.semantic.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(obs.semantic.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else np.uint8
    return np.frombuffer(data[pos:], dtype=dtype).reshape(h, w)
