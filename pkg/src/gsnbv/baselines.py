"""Simplified comparison planners sharing the sensing and mapping stack.

``random-lite`` draws random angles over the whole sector every iteration;
``greedy-lite`` hill-climbs along the ring in fixed angular steps. Neither
is a faithful reimplementation of a published planner.
"""

from __future__ import annotations

import enum
import math
import time

import numpy as np

from .geometry import Viewpoint, project_to_ring, ring_point, signed_angle
from .planner import (
    PlannerConfig,
    PlanningFailed,
    PlanResult,
    expected_gain,
    run_loop,
    utility,
)
from .scene import CameraModel, Scene


class BaselineKind(enum.Enum):
    RANDOM_RING = "random-lite"
    GREEDY_LOCAL = "greedy-lite"


def _in_sector(st, theta: float) -> bool:
    return abs(signed_angle(theta - st.initial_bearing)) <= st.cfg.sector / 2.0


class RandomRingProposer:
    def propose(self, st, v: Viewpoint, rec) -> Viewpoint:
        cfg = st.cfg
        t0 = time.perf_counter()
        ring = st.ring
        half = cfg.sector / 2.0
        thetas = st.initial_bearing + st.rng.uniform(-half, half, cfg.n_candidates)
        t1 = time.perf_counter()
        best, best_u = None, -1.0
        for theta in thetas:
            pos = ring_point(ring, theta)
            vp = Viewpoint.looking_at(pos, st.fruit.position)
            g = expected_gain(st.grid, vp, st.camera, cfg.gain_rays)
            u = utility(g, float(np.linalg.norm(pos - v.position)), cfg.motion_lambda)
            if u > best_u:
                best, best_u = vp, u
        t2 = time.perf_counter()
        rec.n_candidates = len(thetas)
        rec.t_sample, rec.t_eval, rec.t_nbv = t1 - t0, t2 - t1, time.perf_counter() - t2
        return best


def _visited(st, pos: np.ndarray, tol: float = 1e-6) -> bool:
    return any(np.linalg.norm(pos - v.position) < tol for v in st.visited)


class GreedyLocalProposer:
    """Step to the better of the two ring neighbours while utility improves.

    A neighbour that was already visited is not a candidate: in a static
    scene going back cannot reveal anything new, so a climb that can only
    improve by backtracking has stalled on a local maximum.
    """

    def propose(self, st, v: Viewpoint, rec) -> Viewpoint:
        cfg = st.cfg
        t0 = time.perf_counter()
        ring = st.ring
        theta = project_to_ring(ring, v.position)
        step = math.radians(cfg.greedy_step_deg)
        t1 = time.perf_counter()
        here = Viewpoint.looking_at(ring_point(ring, theta), st.fruit.position)
        best_u = expected_gain(st.grid, here, st.camera, cfg.gain_rays)
        best = None
        for cand in (theta - step, theta + step):
            if not _in_sector(st, cand):
                continue
            pos = ring_point(ring, cand)
            if _visited(st, pos, 0.5 * cfg.ring_radius * step):
                continue
            vp = Viewpoint.looking_at(pos, st.fruit.position)
            g = expected_gain(st.grid, vp, st.camera, cfg.gain_rays)
            u = utility(g, float(np.linalg.norm(pos - v.position)), cfg.motion_lambda)
            if u > best_u:
                best, best_u = vp, u
        t2 = time.perf_counter()
        rec.n_candidates = 2
        rec.t_sample, rec.t_eval, rec.t_nbv = t1 - t0, t2 - t1, time.perf_counter() - t2
        if best is None:
            raise PlanningFailed("local maximum: no improving neighbour")
        return best


def plan_random_ring(scene: Scene, camera: CameraModel, initial: Viewpoint, cfg: PlannerConfig = PlannerConfig(), rng=None) -> PlanResult:
    rng = np.random.default_rng(0) if rng is None else rng
    return run_loop(scene, camera, initial, cfg, rng, RandomRingProposer())


def plan_greedy_local(scene: Scene, camera: CameraModel, initial: Viewpoint, cfg: PlannerConfig = PlannerConfig(), rng=None) -> PlanResult:
    rng = np.random.default_rng(0) if rng is None else rng
    return run_loop(scene, camera, initial, cfg, rng, GreedyLocalProposer())
