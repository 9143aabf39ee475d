"""Dense semantic occupancy grid.

Each voxel stores occupancy log-odds, a semantic class with its probability,
a region-of-interest flag and whether any ray has touched it. Voxels are
addressed by a flat index ``x + W * (y + H * z)`` (x fastest).

Insertion follows OctoMap's per-scan discipline: every voxel is updated at
most once per observation and an endpoint hit in the scan overrides free
space carved by other rays.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .geometry import vec3
from .scene import NO_CLASS, CameraModel, Observation

L_FREE = -0.4
L_OCC = 0.85
L_MIN = -2.0
L_MAX = 3.5
MAX_FUSION_PROB = 0.9

MAP_SIZE = (0.42, 0.45, 0.84)
ROI_HALF_EXTENTS = (0.1, 0.1, 0.15)

DUMP_MAGIC = b"SVXG"
DUMP_VERSION = 1
DUMP_RECORD = np.dtype([("L", "<f4"), ("cls", "u1"), ("p_cls", "<f4"), ("roi", "u1")])

_MARK_FREE = 1
_MARK_OCC = 2


class AlreadyMarked(RuntimeError):
    pass


@dataclass(frozen=True)
class RoiBox:
    center: np.ndarray
    half_extents: tuple = ROI_HALF_EXTENTS

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "half_extents", tuple(float(h) for h in self.half_extents))


def semantic_entropy(p):
    """Binary Shannon entropy in bits, with 0*log(0) taken as 0."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -p * np.log2(p) - (1.0 - p) * np.log2(1.0 - p)
    h = np.where((p <= 0.0) | (p >= 1.0), 0.0, h)
    return h if h.ndim else float(h)


# --------------------------------------------------------------------------
# numba kernels; all coordinates are in voxel units relative to the grid origin
# --------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _clip_segment(p0, p1, dims):
    """Parametric [t0, t1] of the segment inside the box [0, dims]; t0 > t1 if none."""
    t0, t1 = 0.0, 1.0
    for a in range(3):
        d = p1[a] - p0[a]
        if d == 0.0:
            if p0[a] < 0.0 or p0[a] > dims[a]:
                return 1.0, 0.0
            continue
        ta = (0.0 - p0[a]) / d
        tb = (dims[a] - p0[a]) / d
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return 1.0, 0.0
    return t0, t1


@numba.njit(cache=True, nogil=True)
def _dda(p0, p1, dims, out, out_t):
    """Amanatides-Woo walk of segment p0->p1 clipped to the grid.

    Writes flat voxel indices to ``out`` and the segment parameter at which
    each voxel is entered to ``out_t``; returns the number of voxels.
    """
    t0, t1 = _clip_segment(p0, p1, dims)
    if t0 > t1:
        return 0
    nx, ny, nz = dims[0], dims[1], dims[2]
    d0 = p1[0] - p0[0]
    d1 = p1[1] - p0[1]
    d2 = p1[2] - p0[2]
    s0 = p0[0] + t0 * d0
    s1 = p0[1] + t0 * d1
    s2 = p0[2] + t0 * d2
    ix = min(max(int(math.floor(s0)), 0), nx - 1)
    iy = min(max(int(math.floor(s1)), 0), ny - 1)
    iz = min(max(int(math.floor(s2)), 0), nz - 1)

    inf = np.inf
    if d0 > 0:
        stx, tmx, tdx = 1, (ix + 1 - p0[0]) / d0, 1.0 / d0
    elif d0 < 0:
        stx, tmx, tdx = -1, (ix - p0[0]) / d0, -1.0 / d0
    else:
        stx, tmx, tdx = 0, inf, inf
    if d1 > 0:
        sty, tmy, tdy = 1, (iy + 1 - p0[1]) / d1, 1.0 / d1
    elif d1 < 0:
        sty, tmy, tdy = -1, (iy - p0[1]) / d1, -1.0 / d1
    else:
        sty, tmy, tdy = 0, inf, inf
    if d2 > 0:
        stz, tmz, tdz = 1, (iz + 1 - p0[2]) / d2, 1.0 / d2
    elif d2 < 0:
        stz, tmz, tdz = -1, (iz - p0[2]) / d2, -1.0 / d2
    else:
        stz, tmz, tdz = 0, inf, inf

    n = 0
    t = t0
    cap = out.shape[0]
    while n < cap:
        out[n] = ix + nx * (iy + ny * iz)
        out_t[n] = t
        n += 1
        if tmx <= tmy and tmx <= tmz:
            t = tmx
            if t > t1:
                break
            ix += stx
            tmx += tdx
            if ix < 0 or ix >= nx:
                break
        elif tmy <= tmz:
            t = tmy
            if t > t1:
                break
            iy += sty
            tmy += tdy
            if iy < 0 or iy >= ny:
                break
        else:
            t = tmz
            if t > t1:
                break
            iz += stz
            tmz += tdz
            if iz < 0 or iz >= nz:
                break
    return n


@numba.njit(cache=True, nogil=True)
def _traverse_kernel(p0, p1, dims):
    out = np.empty(dims[0] + dims[1] + dims[2] + 3, dtype=np.int64)
    out_t = np.empty(out.shape[0], dtype=np.float64)
    n = _dda(p0, p1, dims, out, out_t)
    return out[:n].copy(), out_t[:n].copy()


@numba.njit(cache=True, nogil=True)
def _voxel_of(p, dims):
    ix = int(math.floor(p[0]))
    iy = int(math.floor(p[1]))
    iz = int(math.floor(p[2]))
    if ix < 0 or iy < 0 or iz < 0 or ix >= dims[0] or iy >= dims[1] or iz >= dims[2]:
        return -1
    return ix + dims[0] * (iy + dims[1] * iz)


@numba.njit(cache=True, nogil=True)
def _fuse(cls_arr, p_arr, v, label, p_in):
    cur = cls_arr[v]
    if cur == 255:
        cls_arr[v] = label
        p_arr[v] = p_in
    elif cur == label:
        if p_in > p_arr[v]:
            p_arr[v] = p_in
    elif p_in > p_arr[v]:
        cls_arr[v] = label
        p_arr[v] = p_in


@numba.njit(cache=True, nogil=True)
def _insert_kernel(origin, ends, hit, labels, dims, mark, cls_arr, p_arr, p_in):
    nrays = ends.shape[0]
    end_vox = np.empty(nrays, dtype=np.int64)
    for i in range(nrays):
        v = _voxel_of(ends[i], dims) if hit[i] else -1
        end_vox[i] = v
        if v >= 0:
            mark[v] = 2
            if labels[i] != 255:
                _fuse(cls_arr, p_arr, v, labels[i], p_in)
    buf = np.empty(dims[0] + dims[1] + dims[2] + 3, dtype=np.int64)
    buf_t = np.empty(buf.shape[0], dtype=np.float64)
    for i in range(nrays):
        n = _dda(origin, ends[i], dims, buf, buf_t)
        for j in range(n):
            v = buf[j]
            if v == end_vox[i]:
                continue
            if mark[v] == 0:
                mark[v] = 1


@numba.njit(cache=True, nogil=True)
def _entropy(p):
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


@numba.njit(cache=True, nogil=True)
def _voxel_entropy(v, log_odds, observed, cls_arr, p_arr):
    if not observed[v]:
        return 1.0
    c = cls_arr[v]
    if c == 1 or c == 2:
        return _entropy(p_arr[v])
    return 0.0


@numba.njit(cache=True, nogil=True)
def _gain_kernel(origin, ends, dims, log_odds, observed, cls_arr, p_arr, roi):
    counted = np.zeros(log_odds.shape[0], dtype=np.bool_)
    buf = np.empty(dims[0] + dims[1] + dims[2] + 3, dtype=np.int64)
    buf_t = np.empty(buf.shape[0], dtype=np.float64)
    total = 0.0
    for i in range(ends.shape[0]):
        n = _dda(origin, ends[i], dims, buf, buf_t)
        for j in range(n):
            v = buf[j]
            if log_odds[v] > 0.0:
                if roi[v] and not counted[v]:
                    counted[v] = True
                    total += _voxel_entropy(v, log_odds, observed, cls_arr, p_arr)
                break
            if roi[v] and not observed[v] and not counted[v]:
                counted[v] = True
                total += 1.0
    return total


@numba.njit(cache=True, nogil=True)
def _first_occupied_kernel(p0, p1, dims, log_odds):
    buf = np.empty(dims[0] + dims[1] + dims[2] + 3, dtype=np.int64)
    buf_t = np.empty(buf.shape[0], dtype=np.float64)
    n = _dda(p0, p1, dims, buf, buf_t)
    for j in range(n):
        if log_odds[buf[j]] > 0.0:
            return buf[j], buf_t[j]
    return -1, 0.0


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------


class SemanticVoxelGrid:
    """W x H x D voxel grid with occupancy, semantic and ROI channels."""

    def __init__(self, origin, dims, resolution: float = 0.003):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        self.origin = vec3(origin)
        self.dims = np.asarray(dims, dtype=np.int64).reshape(3)
        if np.any(self.dims < 1):
            raise ValueError("grid dims must be positive")
        self.resolution = float(resolution)
        n = int(np.prod(self.dims))
        self.log_odds = np.zeros(n, dtype=np.float32)
        self.cls = np.full(n, NO_CLASS, dtype=np.uint8)
        self.p_cls = np.zeros(n, dtype=np.float32)
        self.roi = np.zeros(n, dtype=bool)
        self.observed = np.zeros(n, dtype=bool)
        self._roi_marked = False

    @classmethod
    def centered(cls, center, size=MAP_SIZE, resolution: float = 0.003) -> "SemanticVoxelGrid":
        size = np.asarray(size, dtype=float)
        dims = np.round(size / resolution).astype(np.int64)
        origin = vec3(center) - dims * resolution / 2.0
        return cls(origin, dims, resolution)

    @property
    def n_voxels(self) -> int:
        return self.log_odds.shape[0]

    @property
    def occupancy(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.log_odds.astype(float)))

    # index helpers ---------------------------------------------------------

    def to_grid(self, p) -> np.ndarray:
        """World point(s) -> continuous voxel coordinates."""
        return (np.asarray(p, dtype=float) - self.origin) / self.resolution

    def flat_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.int64)
        nx, ny, _ = self.dims
        return ijk[..., 0] + nx * (ijk[..., 1] + ny * ijk[..., 2])

    def unflatten(self, flat) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        nx, ny, _ = self.dims
        return np.stack([flat % nx, (flat // nx) % ny, flat // (nx * ny)], axis=-1)

    def voxel_center(self, ijk) -> np.ndarray:
        return self.origin + (np.asarray(ijk, dtype=float) + 0.5) * self.resolution

    def voxel_of(self, p) -> Optional[tuple[int, int, int]]:
        g = np.floor(self.to_grid(p)).astype(np.int64)
        if np.any(g < 0) or np.any(g >= self.dims):
            return None
        return tuple(int(c) for c in g)

    # ROI --------------------------------------------------------------------

    def mark_roi(self, box: RoiBox) -> int:
        """Flag voxels whose centres lie inside ``box``. May only be called once."""
        if self._roi_marked:
            raise AlreadyMarked("ROI already marked")
        lo = box.center - np.asarray(box.half_extents)
        hi = box.center + np.asarray(box.half_extents)
        axes = [self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.resolution for a in range(3)]
        inside = [(c >= lo[a]) & (c <= hi[a]) for a, c in enumerate(axes)]
        mask = inside[2][:, None, None] & inside[1][None, :, None] & inside[0][None, None, :]
        self.roi = mask.reshape(-1).copy()
        self._roi_marked = True
        return int(self.roi.sum())

    # ray queries ------------------------------------------------------------

    def traverse(self, start, end) -> list[tuple[int, int, int]]:
        """Voxels crossed by the segment start->end, in order."""
        idx, _ = _traverse_kernel(self.to_grid(start), self.to_grid(end), self.dims)
        return [tuple(int(c) for c in row) for row in self.unflatten(idx)]

    def first_occupied_along(self, origin, direction, max_range: float):
        """(voxel, distance to where the ray enters it) of the first voxel with L > 0, or None."""
        direction = np.asarray(direction, dtype=float)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
            raise ValueError("direction must be unit length")
        origin = np.asarray(origin, dtype=float)
        v, t = _first_occupied_kernel(
            self.to_grid(origin), self.to_grid(origin + max_range * direction), self.dims, self.log_odds
        )
        if v < 0:
            return None
        return tuple(int(c) for c in self.unflatten(v)), float(t * max_range)

    # updates ---------------------------------------------------------------

    def insert_observation(
        self,
        obs: Observation,
        camera: CameraModel,
        p_in: float = MAX_FUSION_PROB,
        carve_no_return: bool = True,
    ) -> dict:
        """Raycast every valid depth pixel into the map.

        With ``carve_no_return`` pixels without a depth reading clear free
        space up to the far clip, like OctoMap's max-range insertion.
        Returns counts of rays and of voxels updated as free and occupied.
        """
        valid = obs.valid
        rows, cols = np.nonzero(valid)
        ends = camera.backproject(obs.pose, rows, cols, obs.depth[rows, cols])
        labels = obs.semantic[rows, cols].astype(np.uint8)
        hit = np.ones(len(ends), dtype=bool)
        if carve_no_return:
            mrows, mcols = np.nonzero(~valid)
            far = camera.backproject(obs.pose, mrows, mcols, np.full(len(mrows), camera.far))
            ends = np.concatenate([ends, far])
            labels = np.concatenate([labels, np.full(len(far), NO_CLASS, dtype=np.uint8)])
            hit = np.concatenate([hit, np.zeros(len(far), dtype=bool)])
        return self.insert_rays(obs.pose.position, ends, labels, p_in, hit=hit)

    def insert_rays(self, origin, ends, labels=None, p_in: float = MAX_FUSION_PROB, hit=None) -> dict:
        """Insert rays from ``origin``; ``hit[i]`` False means ray i has no endpoint."""
        ends = np.atleast_2d(np.asarray(ends, dtype=float))
        if labels is None:
            labels = np.full(len(ends), NO_CLASS, dtype=np.uint8)
        if hit is None:
            hit = np.ones(len(ends), dtype=bool)
        mark = np.zeros(self.n_voxels, dtype=np.uint8)
        _insert_kernel(
            self.to_grid(origin),
            np.ascontiguousarray(self.to_grid(ends)),
            np.asarray(hit, dtype=np.bool_),
            np.asarray(labels, dtype=np.uint8),
            self.dims,
            mark,
            self.cls,
            self.p_cls,
            np.float32(p_in),
        )
        free = np.flatnonzero(mark == _MARK_FREE)
        occ = np.flatnonzero(mark == _MARK_OCC)
        self.log_odds[free] = np.clip(self.log_odds[free] + np.float32(L_FREE), L_MIN, L_MAX)
        self.log_odds[occ] = np.clip(self.log_odds[occ] + np.float32(L_OCC), L_MIN, L_MAX)
        self.observed[free] = True
        self.observed[occ] = True
        return {"rays": len(ends), "free": len(free), "occupied": len(occ)}

    # information -------------------------------------------------------------

    def voxel_entropy(self, ijk) -> float:
        v = int(self.flat_index(ijk))
        return float(_voxel_entropy(v, self.log_odds, self.observed, self.cls, self.p_cls))

    def ray_bundle_gain(self, origin, dirs, max_range: float) -> float:
        """Entropy of ROI voxels visible along the rays, each voxel counted once.

        A ray passes through free and never-observed voxels and stops at the
        first occupied one; unobserved ROI voxels on the way count one bit.
        """
        origin = np.asarray(origin, dtype=float)
        ends = origin + max_range * np.asarray(dirs, dtype=float).reshape(-1, 3)
        return float(
            _gain_kernel(
                self.to_grid(origin),
                np.ascontiguousarray(self.to_grid(ends)),
                self.dims,
                self.log_odds,
                self.observed,
                self.cls,
                self.p_cls,
                self.roi,
            )
        )

    # serialization -----------------------------------------------------------

    def dump(self, path) -> None:
        nx, ny, nz = (int(d) for d in self.dims)
        header = DUMP_MAGIC + struct.pack("<HHHHf", DUMP_VERSION, nx, ny, nz, self.resolution)
        rec = np.empty(self.n_voxels, dtype=DUMP_RECORD)
        rec["L"] = self.log_odds
        rec["cls"] = self.cls
        rec["p_cls"] = self.p_cls
        rec["roi"] = self.roi
        with open(path, "wb") as f:
            f.write(header)
            f.write(rec.tobytes())


def load_dump(path) -> dict:
    """Read a grid dump back into plain arrays (for inspection and tests)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != DUMP_MAGIC:
        raise ValueError(f"{path}: not a voxel grid dump")
    version, nx, ny, nz, res = struct.unpack("<HHHHf", data[4:16])
    rec = np.frombuffer(data[16:], dtype=DUMP_RECORD)
    if rec.shape[0] != nx * ny * nz:
        raise ValueError(f"{path}: truncated dump")
    return {"version": version, "dims": (nx, ny, nz), "resolution": res, "records": rec}


