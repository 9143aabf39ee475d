"""Next-best-view planning on the picking ring.

One planning step: sense, score pickability, update the map, refresh the
fruit pose and ring, shrink the sampling space by the newly seen obstacles,
sample four equidistant candidates, score them and move to the best one in
the viewpoint queue. Gains of queued candidates are frozen when they are
created; only their motion cost is refreshed.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import geometry as geo
from .geometry import (
    ArcSet,
    EmptySamplingSpace,
    FruitPose,
    OnAxis,
    PickingRing,
    Viewpoint,
    project_to_ring,
    ring_from_pose,
    ring_point,
    signed_angle,
    subtract_interval,
    uniform_equidistant_sample,
)
from .perception import (
    ObstacleSet,
    PickReport,
    TooFewPoints,
    estimate_fruit_pose,
    extract_obstacle_points,
    pick_report,
    update_fruit_pose,
)
from .scene import CameraModel, Scene, apply_mask_noise, render
from .semantic_map import RoiBox, SemanticVoxelGrid

log = logging.getLogger(__name__)


class EmptyQueue(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    ring_radius: float = 0.21
    sector_deg: float = 270.0
    n_candidates: int = 4
    motion_lambda: float = -1.0
    dissimilarity_radius: float = 0.1
    # utility threshold at full ray density; scaled by the ray subsampling
    min_utility_full: float = 10.0
    pick_threshold: float = 0.9
    n_max: int = 10
    pose_gain: float = 0.7
    d_offset: float = 0.06
    dilation_px: int = 3
    gain_rays: int = 4  # pixel stride of the gain-evaluation ray bundle
    map_resolution: float = 0.003
    mask_dropout: float = 0.0
    greedy_step_deg: float = 15.0

    def __post_init__(self):
        for name in ("ring_radius", "dissimilarity_radius", "map_resolution", "d_offset"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.sector_deg <= 360:
            raise ValueError("sector must be in (0, 360] degrees")
        if self.n_candidates < 1 or self.gain_rays < 1 or self.n_max < 0:
            raise ValueError("invalid count parameter")

    @property
    def min_utility(self) -> float:
        return self.min_utility_full / (self.gain_rays * self.gain_rays)

    @property
    def sector(self) -> float:
        return math.radians(self.sector_deg)

    def with_overrides(self, **kw) -> "PlannerConfig":
        return replace(self, **kw)


@dataclass
class Candidate:
    viewpoint: Viewpoint
    theta: float
    gain: float
    created_iter: int
    utility: float = 0.0


@dataclass
class IterationRecord:
    """What happened at one sensing step."""

    report: PickReport
    fruit: Optional[FruitPose]
    pose: Viewpoint
    n_obstacles: int = 0
    arc_measure_prev: float = float("nan")  # previous arcs re-projected onto this ring
    arc_measure: float = float("nan")
    n_candidates: int = 0
    selected: Optional[Candidate] = None
    t_sample: float = 0.0
    t_eval: float = 0.0
    t_nbv: float = 0.0


@dataclass
class PlanResult:
    success: bool
    pose_list: list
    records: list
    fruit: Optional[FruitPose]
    reason: str = ""
    grid: Optional[SemanticVoxelGrid] = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.pose_list) - 1


# --------------------------------------------------------------------------
# scoring
# --------------------------------------------------------------------------


def expected_gain(grid: SemanticVoxelGrid, vp: Viewpoint, camera: CameraModel, stride: int = 4) -> float:
    """Semantic information gain of ROI voxels visible from ``vp``."""
    rows, cols = camera.pixel_grid(stride)
    dirs = camera.world_rays(vp, rows.ravel(), cols.ravel())
    return grid.ray_bundle_gain(vp.position, dirs, camera.far)


def utility(gain: float, d: float, lam: float = -1.0) -> float:
    if d < 0:
        raise ValueError("distance must be non-negative")
    return gain * math.exp(-lam * d)


# --------------------------------------------------------------------------
# sampling space
# --------------------------------------------------------------------------


@dataclass
class BlockedArc:
    """Blocked interval swept counter-clockwise from ``start`` to ``end``.

    Endpoints are world points so the interval can be re-projected when
    the ring moves. ``width`` is the sweep when the arc was last projected
    and disambiguates endpoints that swap order after re-projection.
    """

    start: np.ndarray
    end: np.ndarray
    width: float

    def on_ring(self, ring: PickingRing) -> tuple[float, float]:
        a = project_to_ring(ring, self.start)
        b = project_to_ring(ring, self.end)
        w = (b - a) % geo.TWO_PI
        if abs(w - self.width) > math.pi:
            # the endpoints swapped; keep the arc that is continuous with before
            a, w = b, (a - b) % geo.TWO_PI
        return a, w


def _arcs_from(blocked: list, ring: PickingRing) -> ArcSet:
    arcs = ArcSet.full()
    for arc in blocked:
        try:
            lo, w = arc.on_ring(ring)
        except OnAxis:
            continue
        arcs = subtract_interval(arcs, lo, lo + w)
    return arcs


class SamplingSpace:
    """The shrinking set of admissible angles on the picking ring."""

    def __init__(self, ring: PickingRing, camera_position, sector: float):
        theta_c = project_to_ring(ring, camera_position)
        half = sector / 2.0
        self.blocked: list[BlockedArc] = []
        if sector < geo.TWO_PI:
            p_b1 = ring_point(ring, theta_c - half)
            p_b2 = ring_point(ring, theta_c + half)
            self.blocked.append(BlockedArc(p_b2, p_b1, geo.TWO_PI - sector))
        self.ring = ring
        self.arcs = _arcs_from(self.blocked, ring)

    @property
    def boundary_points(self) -> list[np.ndarray]:
        pts = []
        for arc in self.blocked:
            pts.extend([arc.start, arc.end])
        return pts

    def update(self, ring: PickingRing, new_obstacles: np.ndarray, camera_position) -> tuple[ArcSet, float]:
        """Re-project the history onto ``ring`` and block the new obstacles.

        Returns the new arcs and the measure of the previous arcs after
        re-projection.
        """
        for arc in self.blocked:
            try:
                arc.width = arc.on_ring(ring)[1]
            except OnAxis:
                pass
        self.ring = ring
        reprojected = _arcs_from(self.blocked, ring)
        arc = blocked_interval(ring, new_obstacles, camera_position)
        if arc is not None:
            self.blocked.append(arc)
        self.arcs = reprojected if arc is None else subtract_interval(reprojected, *_lo_hi(arc, ring))
        return self.arcs, reprojected.measure


def _lo_hi(arc: BlockedArc, ring: PickingRing) -> tuple[float, float]:
    lo, w = arc.on_ring(ring)
    return lo, lo + w


def blocked_interval(ring: PickingRing, obstacles: np.ndarray, camera_position) -> Optional[BlockedArc]:
    """Arc between the leftmost and rightmost obstacle bearings.

    Bearings are signed angles about the ring centre relative to the
    camera's own bearing, so the blocked arc never wraps through the rear.
    """
    obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 3)
    if len(obstacles) == 0:
        return None
    theta_c = project_to_ring(ring, camera_position)
    rel, pts = [], []
    for p in obstacles:
        try:
            rel.append(signed_angle(project_to_ring(ring, p) - theta_c))
            pts.append(p)
        except OnAxis:
            continue
    if not rel:
        return None
    i_lo, i_hi = int(np.argmin(rel)), int(np.argmax(rel))
    return BlockedArc(np.array(pts[i_lo]), np.array(pts[i_hi]), rel[i_hi] - rel[i_lo])


def update_sampling_space(space: SamplingSpace, ring: PickingRing, obstacles: ObstacleSet, camera_position) -> ArcSet:
    """Functional wrapper: shrink ``space`` by the latest obstacle batch."""
    arcs, _ = space.update(ring, obstacles.latest, camera_position)
    return arcs


# --------------------------------------------------------------------------
# candidates and queue
# --------------------------------------------------------------------------


def _near_any(p, others, radius) -> bool:
    return any(np.linalg.norm(p - q) < radius for q in others)


def generate_candidates(
    arcs: ArcSet,
    ring: PickingRing,
    fruit: FruitPose,
    history: list,
    grid: SemanticVoxelGrid,
    camera: CameraModel,
    cfg: PlannerConfig,
    current: Viewpoint,
    iteration: int,
) -> tuple[list[Candidate], list[np.ndarray]]:
    """Equidistant candidates that survive the dissimilarity and utility filters.

    ``history`` holds positions of every earlier sample and visited pose.
    Returns the survivors (gain frozen) and the positions of all samples
    drawn this call.
    """
    thetas = uniform_equidistant_sample(arcs, cfg.n_candidates)
    out, drawn = [], []
    for theta in thetas:
        pos = ring_point(ring, theta)
        near = _near_any(pos, history, cfg.dissimilarity_radius)
        drawn.append(pos)
        if near:
            continue
        vp = Viewpoint.looking_at(pos, fruit.position)
        g = expected_gain(grid, vp, camera, cfg.gain_rays)
        u = utility(g, float(np.linalg.norm(pos - current.position)), cfg.motion_lambda)
        if u < cfg.min_utility:
            continue
        out.append(Candidate(vp, theta, g, iteration, u))
    return out, drawn


def _rank_key(c: Candidate):
    return (-c.utility, -c.gain, c.created_iter, c.theta)


class ViewpointQueue:
    """Candidates kept across iterations with frozen gains."""

    def __init__(self):
        self.candidates: list[Candidate] = []

    def __len__(self) -> int:
        return len(self.candidates)

    def extend(self, cands) -> None:
        self.candidates.extend(cands)
        self.candidates.sort(key=_rank_key)

    def refresh(self, current: Viewpoint, lam: float) -> None:
        for c in self.candidates:
            d = float(np.linalg.norm(c.viewpoint.position - current.position))
            c.utility = utility(c.gain, d, lam)
        self.candidates.sort(key=_rank_key)

    def pop_best(self) -> Candidate:
        if not self.candidates:
            raise EmptyQueue("viewpoint queue is empty")
        return self.candidates.pop(0)


def select_nbv(queue: ViewpointQueue, current: Viewpoint, lam: float = -1.0) -> Candidate:
    """Refresh motion costs of the queued candidates and pop the best one."""
    queue.refresh(current, lam)
    return queue.pop_best()


# --------------------------------------------------------------------------
# planning loop shared with the baselines
# --------------------------------------------------------------------------


class _State:
    """Everything a proposer may read while choosing the next pose."""

    def __init__(self, scene, camera, cfg, rng):
        self.scene = scene
        self.camera = camera
        self.cfg = cfg
        self.rng = rng
        self.fruit: Optional[FruitPose] = None
        self.grid: Optional[SemanticVoxelGrid] = None
        self.obstacles = ObstacleSet()
        self.visited: list[Viewpoint] = []
        self.iteration = 0
        self.initial_bearing: Optional[float] = None

    @property
    def ring(self) -> PickingRing:
        return ring_from_pose(self.fruit, self.cfg.ring_radius)


class PlanningFailed(RuntimeError):
    pass


def run_loop(scene: Scene, camera: CameraModel, initial: Viewpoint, cfg: PlannerConfig, rng, proposer) -> PlanResult:
    """Sense, score, map, propose, move; until pickable or out of iterations."""
    st = _State(scene, camera, cfg, rng)
    v = initial
    pose_list = [v]
    records: list[IterationRecord] = []
    success, reason = False, "max iterations reached"
    while st.iteration <= cfg.n_max:
        st.visited.append(v)
        obs = render(scene, camera, v)
        if cfg.mask_dropout > 0:
            obs = apply_mask_noise(obs, cfg.mask_dropout, rng)
        report, curves = pick_report(obs, cfg.dilation_px, cfg.d_offset)
        try:
            f_new = estimate_fruit_pose(obs, camera)
            st.fruit = f_new if st.fruit is None else update_fruit_pose(st.fruit, f_new, cfg.pose_gain)
        except TooFewPoints:
            if st.fruit is None:
                reason = "fruit not visible from the initial pose"
                records.append(IterationRecord(report, None, v))
                break
        new_obs = np.empty((0, 3))
        if curves is not None:
            new_obs = extract_obstacle_points(obs, curves.surrounding, report.d_fmin, camera)
        st.obstacles.extend(new_obs)
        if st.grid is None:
            st.grid = SemanticVoxelGrid.centered(st.fruit.position, resolution=cfg.map_resolution)
            st.grid.mark_roi(RoiBox(st.fruit.position))
            st.initial_bearing = project_to_ring(st.ring, v.position)
        st.grid.insert_observation(obs, camera)
        rec = IterationRecord(report, st.fruit, v, n_obstacles=len(new_obs))
        records.append(rec)
        if report.s_pick > cfg.pick_threshold:
            success, reason = True, "pickable"
            break
        if st.iteration >= cfg.n_max:
            break
        try:
            nxt = proposer.propose(st, v, rec)
        except PlanningFailed as e:
            reason = str(e)
            break
        v = nxt
        pose_list.append(v)
        st.iteration += 1
    log.debug("planning finished: success=%s after %d iterations (%s)", success, len(pose_list) - 1, reason)
    return PlanResult(success, pose_list, records, st.fruit, reason, st.grid)


class GsNbvProposer:
    """Picking-ring sampling with dissimilarity filtering and a stale-gain queue."""

    def __init__(self):
        self.space: Optional[SamplingSpace] = None
        self.queue = ViewpointQueue()
        self.history: list[np.ndarray] = []

    def propose(self, st: _State, v: Viewpoint, rec: IterationRecord) -> Viewpoint:
        cfg = st.cfg
        t0 = time.perf_counter()
        ring = st.ring
        if self.space is None:
            self.space = SamplingSpace(ring, v.position, cfg.sector)
        arcs, rec.arc_measure_prev = self.space.update(ring, st.obstacles.latest, v.position)
        rec.arc_measure = arcs.measure
        self.history.append(v.position)
        t1 = time.perf_counter()
        fresh = self._sample(arcs, ring, st, v, self.history)
        if not fresh and not self.queue:
            # resample once, only keeping clear of poses actually visited
            fresh = self._sample(arcs, ring, st, v, [p.position for p in st.visited])
        t2 = time.perf_counter()
        rec.n_candidates = len(fresh)
        self.queue.extend(fresh)
        if not self.queue:
            raise PlanningFailed("empty sampling space and viewpoint queue")
        best = select_nbv(self.queue, v, cfg.motion_lambda)
        rec.selected = best
        rec.t_sample, rec.t_eval, rec.t_nbv = t1 - t0, t2 - t1, time.perf_counter() - t2
        return best.viewpoint

    def _sample(self, arcs, ring, st, v, history):
        try:
            cands, drawn = generate_candidates(
                arcs, ring, st.fruit, history, st.grid, st.camera, st.cfg, v, st.iteration
            )
        except EmptySamplingSpace:
            return []
        self.history.extend(drawn)
        return cands


def plan(scene: Scene, camera: CameraModel, initial: Viewpoint, cfg: PlannerConfig = PlannerConfig(), rng=None) -> PlanResult:
    """Run the GS-NBV loop from ``initial``."""
    rng = np.random.default_rng(0) if rng is None else rng
    return run_loop(scene, camera, initial, cfg, rng, GsNbvProposer())
