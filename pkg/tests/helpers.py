"""Shared scripted scenarios for the planner and acceptance tests."""

import numpy as np

from gsnbv.geometry import project_to_ring
from gsnbv.perception import estimate_fruit_pose, extract_obstacle_points, pick_report
from gsnbv.planner import GsNbvProposer, IterationRecord, PlannerConfig, _State, expected_gain
from gsnbv.scenarios import builtin_group1
from gsnbv.scene import render
from gsnbv.semantic_map import RoiBox, SemanticVoxelGrid


def _sense(st, v):
    obs = render(st.scene, st.camera, v)
    report, curves = pick_report(obs)
    st.visited.append(v)
    st.grid.insert_observation(obs, st.camera)
    return obs, report, curves


def run_scripted_stale_queue():
    """Two planning iterations on group1 where the second draws no fresh candidates.

    Iteration 1 fills the queue. Before iteration 2 the fruit estimate is
    held fixed and no new obstacles are reported, so the sampling space is
    unchanged and every equidistant sample lands on an earlier one and is
    discarded. The next view must then come from the iteration-1 leftovers.
    """
    sc = builtin_group1()
    cfg = PlannerConfig()
    st = _State(sc.scene, sc.camera, cfg, np.random.default_rng(0))
    v0 = sc.initial_pose
    obs = render(sc.scene, sc.camera, v0)
    st.fruit = estimate_fruit_pose(obs, sc.camera)
    st.grid = SemanticVoxelGrid.centered(st.fruit.position, resolution=cfg.map_resolution)
    st.grid.mark_roi(RoiBox(st.fruit.position))
    st.initial_bearing = project_to_ring(st.ring, v0.position)
    _, report, curves = _sense(st, v0)
    st.obstacles.extend(extract_obstacle_points(obs, curves.surrounding, report.d_fmin, sc.camera))

    proposer = GsNbvProposer()
    rec1 = IterationRecord(report, st.fruit, v0)
    v1 = proposer.propose(st, v0, rec1)
    leftovers = {id(c): c.gain for c in proposer.queue.candidates}

    st.iteration = 1
    _, report1, _ = _sense(st, v1)
    st.obstacles.extend(np.empty((0, 3)))
    rec2 = IterationRecord(report1, st.fruit, v1)
    proposer.propose(st, v1, rec2)
    chosen = rec2.selected
    return {
        "first": rec1.selected,
        "n_first": rec1.n_candidates,
        "leftovers": len(leftovers),
        "fresh_second": rec2.n_candidates,
        "chosen": chosen,
        "frozen_gain": leftovers.get(id(chosen)),
        "recomputed_gain": expected_gain(st.grid, chosen.viewpoint, sc.camera, cfg.gain_rays),
    }
