"""Trial runner and CSV reports.

A trial is one planning episode on a scenario with its own RNG seeded by
``base_seed + i``. Trials run in a thread pool whose size is capped by the
``GSNBV_THREADS`` environment variable; results keep trial order.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import plan_greedy_local, plan_random_ring
from .geometry import PickingRing, project_to_ring
from .planner import PlannerConfig, PlanResult, plan
from .scenarios import Scenario

PLANNERS = {
    "gsnbv": plan,
    "random-lite": plan_random_ring,
    "greedy-lite": plan_greedy_local,
}

TIMING_COLUMNS = ("t_sample_s", "t_eval_s", "t_nbv_s")
SUMMARY_METRICS = ("success", "iterations", "pos_err_m", "axis_err_deg") + TIMING_COLUMNS + ("t_total_s",)


@dataclass
class TrialMetrics:
    planner: str
    seed: int
    success: bool
    iterations: int
    reason: str
    s_dis: list = field(default_factory=list)
    s_occ: list = field(default_factory=list)
    s_pick: list = field(default_factory=list)
    pos_err_m: float = float("nan")
    axis_err_deg: float = float("nan")
    t_sample_s: float = 0.0
    t_eval_s: float = 0.0
    t_nbv_s: float = 0.0
    # bearings (deg, ground-truth ring) of every pose and arc measures per step
    bearings_deg: list = field(default_factory=list)
    arc_measures: list = field(default_factory=list)
    result: Optional[PlanResult] = field(default=None, repr=False)

    @property
    def unoccluded(self) -> list:
        return [1.0 - s for s in self.s_occ]

    @property
    def t_total_s(self) -> float:
        return self.t_sample_s + self.t_eval_s + self.t_nbv_s


def worker_count(n_trials: int) -> int:
    env = os.environ.get("GSNBV_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ValueError(f"GSNBV_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ValueError("GSNBV_THREADS must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_trials))


def config_for(scenario: Scenario, **overrides) -> PlannerConfig:
    kw = dict(scenario.config_overrides)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return PlannerConfig().with_overrides(**kw)


def metrics_from_result(planner: str, seed: int, res: PlanResult, scenario: Scenario) -> TrialMetrics:
    gt = scenario.ground_truth
    m = TrialMetrics(planner, seed, res.success, res.iterations, res.reason)
    for rec in res.records:
        m.s_dis.append(int(rec.report.s_dis))
        m.s_occ.append(float(rec.report.s_occ))
        m.s_pick.append(float(rec.report.s_pick))
        m.t_sample_s += rec.t_sample
        m.t_eval_s += rec.t_eval
        m.t_nbv_s += rec.t_nbv
        m.arc_measures.append((rec.arc_measure_prev, rec.arc_measure))
    if res.fruit is not None:
        m.pos_err_m = float(np.linalg.norm(res.fruit.position - gt.position))
        c = float(np.clip(np.dot(res.fruit.axis, gt.axis), -1.0, 1.0))
        m.axis_err_deg = math.degrees(math.acos(c))
    ring = PickingRing(gt.position, gt.axis, 0.21)
    m.bearings_deg = [math.degrees(project_to_ring(ring, v.position)) for v in res.pose_list]
    m.result = res
    return m


def run_trial(scenario: Scenario, planner: str, seed: int, cfg: PlannerConfig, keep_grid: bool = False) -> TrialMetrics:
    fn = PLANNERS[planner]
    rng = np.random.default_rng(seed)
    res = fn(scenario.scene, scenario.camera, scenario.initial_pose, cfg, rng)
    if not keep_grid:
        res.grid = None  # tens of MB per trial
    return metrics_from_result(planner, seed, res, scenario)


def run_trials(
    scenario: Scenario,
    planner: str,
    n_trials: int,
    base_seed: int = 0,
    cfg: Optional[PlannerConfig] = None,
    workers: Optional[int] = None,
    keep_first_grid: bool = False,
) -> list[TrialMetrics]:
    """Trial i uses seed ``base_seed + i``; only trial 0 may keep its map."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if planner not in PLANNERS:
        raise ValueError(f"unknown planner {planner!r}; choose from {sorted(PLANNERS)}")
    cfg = config_for(scenario) if cfg is None else cfg
    seeds = [base_seed + i for i in range(n_trials)]
    workers = worker_count(n_trials) if workers is None else workers

    def one(i: int) -> TrialMetrics:
        return run_trial(scenario, planner, seeds[i], cfg, keep_grid=keep_first_grid and i == 0)

    if workers == 1:
        return [one(i) for i in range(n_trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n_trials)))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.9g}"


def _value(m: TrialMetrics, name: str) -> float:
    v = getattr(m, name)
    return float(v)


def summarize(metrics: list[TrialMetrics]) -> dict:
    """mean and (population) std per metric per planner."""
    out: dict = {}
    for planner in dict.fromkeys(m.planner for m in metrics):
        rows = [m for m in metrics if m.planner == planner]
        stats = {}
        for name in SUMMARY_METRICS:
            vals = np.array([_value(m, name) for m in rows], dtype=float)
            vals = vals[~np.isnan(vals)]
            if vals.size:
                stats[name] = (float(vals.mean()), float(vals.std()))
            else:
                stats[name] = (float("nan"), float("nan"))
        stats["n"] = len(rows)
        out[planner] = stats
    return out


def trial_columns(n_iter: int) -> list[str]:
    return (
        ["planner", "seed", "success", "iterations", "pos_err_m", "axis_err_deg"]
        + [f"s_pick_iter{i}" for i in range(n_iter + 1)]
        + list(TIMING_COLUMNS)
    )


def unoccluded_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + "_unoccluded.csv")


def write_report(metrics: list[TrialMetrics], path) -> dict:
    """Write the per-trial CSV with a summary block, plus the unoccluded-rate CSV.

    The summary block follows the trial rows after one blank line and has
    its own header ``summary,planner,metric,mean,std``.
    """
    if not metrics:
        raise ValueError("no metrics to report")
    n_iter = max(len(m.s_pick) for m in metrics) - 1
    summary = summarize(metrics)
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(trial_columns(n_iter))
            for m in metrics:
                picks = [_fmt(s) for s in m.s_pick] + [""] * (n_iter + 1 - len(m.s_pick))
                w.writerow(
                    [m.planner, m.seed, _fmt(m.success), m.iterations, _fmt(m.pos_err_m), _fmt(m.axis_err_deg)]
                    + picks
                    + [_fmt(m.t_sample_s), _fmt(m.t_eval_s), _fmt(m.t_nbv_s)]
                )
            w.writerow([])
            w.writerow(["summary", "planner", "metric", "mean", "std"])
            for planner, stats in summary.items():
                for name in SUMMARY_METRICS:
                    mean, std = stats[name]
                    w.writerow(["summary", planner, name, _fmt(mean), _fmt(std)])
        with unoccluded_path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["planner", "seed"] + [f"iter{i}" for i in range(n_iter + 1)])
            for m in metrics:
                u = [_fmt(x) for x in m.unoccluded]
                w.writerow([m.planner, m.seed] + u + [""] * (n_iter + 1 - len(u)))
    except OSError as e:
        raise OSError(f"cannot write report {path}: {e}") from e
    return summary


def read_trials(path) -> list[dict]:
    """Trial rows of a report written by :func:`write_report`."""
    rows = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            if not row["planner"] or row["planner"] == "summary":
                break
            rows.append(row)
    return rows


def write_poses(metrics: list[TrialMetrics], path) -> None:
    data = [
        {
            "planner": m.planner,
            "seed": m.seed,
            "success": m.success,
            "poses": [v.to_dict() for v in m.result.pose_list] if m.result else [],
        }
        for m in metrics
    ]
    try:
        Path(path).write_text(json.dumps(data, indent=2) + "\n")
    except OSError as e:
        raise OSError(f"cannot write poses {path}: {e}") from e
