"""Run-level metrics computed from a simulation log."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .engine import SimulationLog
from .scenario import IntentionKind, Scenario


@dataclass
class RunMetrics:
    scenario: str
    seed: int
    collisions: int
    n_vehicles: int
    n_tasked: int  # controlled vehicles with a non-trivial intention
    n_finished: int
    success_rate: float
    avg_finish_time: float  # over finished vehicles, seconds; nan if none
    max_finish_time: float
    avg_travel_time: float  # entry to exit, over vehicles that left; nan if none
    avg_speed: float
    avg_abs_accel: float
    min_distance: float  # smallest pairwise center distance observed, m
    avg_headway: float  # mean same-lane gap to the vehicle ahead, m
    throughput: float  # vehicles exiting the network per minute
    expanded_nodes: int
    avg_expanded_nodes: float  # mean expanded nodes per decision round
    avg_available_actions: float
    decision_wall_time: float
    planning_wall_time: float
    acceleration_ratio: float  # simulated seconds per wall-clock second


def _pairwise_stats(rows):
    """Min pairwise distance and mean same-lane headway from log rows."""
    by_time = defaultdict(list)
    for r in rows:
        by_time[r[0]].append(r)
    min_dist = math.inf
    headways = []
    for rows_t in by_time.values():
        n = len(rows_t)
        if n < 2:
            continue
        xy = np.array([(r[2], r[3]) for r in rows_t])
        diff = xy[:, None, :] - xy[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        iu = np.triu_indices(n, 1)
        if len(iu[0]):
            min_dist = min(min_dist, float(dist[iu].min()))
        by_lane = defaultdict(list)
        for r in rows_t:
            by_lane[r[9]].append(r[4])  # s within the lane
        for ss in by_lane.values():
            ss.sort()
            headways.extend(b - a for a, b in zip(ss, ss[1:]))
    return min_dist, (float(np.mean(headways)) if headways else math.nan)


def compute_metrics(log: SimulationLog, scenario: Scenario) -> RunMetrics:
    tasked = [v.spec.id for v in scenario.flow.vehicles
              if v.spec.controlled and v.intention.kind is not IntentionKind.KEEP_LANE]
    finished = [vid for vid in tasked if vid in log.finish_times]
    first_seen: dict = {}
    for r in log.rows:
        first_seen.setdefault(r[1], r[0])
    speeds = [r[6] for r in log.rows]
    accels = [abs(r[7]) for r in log.rows]
    min_dist, headway = _pairwise_stats(log.rows)
    wall = log.decision_wall_time + log.planning_wall_time
    n_nodes = sum(d.avail_actions_nodes for d in log.decisions)
    return RunMetrics(
        scenario=log.scenario,
        seed=log.seed,
        collisions=len(log.collisions),
        n_vehicles=len({r[1] for r in log.rows}),
        n_tasked=len(tasked),
        n_finished=len(finished),
        success_rate=len(finished) / len(tasked) if tasked else 1.0,
        avg_finish_time=(float(np.mean([log.finish_times[v] for v in finished]))
                         if finished else math.nan),
        max_finish_time=(max(log.finish_times[v] for v in finished)
                         if finished else math.nan),
        avg_travel_time=(float(np.mean([t - first_seen[v]
                                        for v, t in log.exited.items()]))
                         if log.exited else math.nan),
        avg_speed=float(np.mean(speeds)) if speeds else math.nan,
        avg_abs_accel=float(np.mean(accels)) if accels else math.nan,
        min_distance=min_dist,
        avg_headway=headway,
        throughput=60.0 * len(log.exited) / log.sim_time if log.sim_time else 0.0,
        expanded_nodes=sum(d.expanded_nodes for d in log.decisions),
        avg_expanded_nodes=(float(np.mean([d.expanded_nodes
                                           for d in log.decisions]))
                            if log.decisions else 0.0),
        avg_available_actions=(sum(d.avail_actions_sum for d in log.decisions)
                               / n_nodes if n_nodes else math.nan),
        decision_wall_time=log.decision_wall_time,
        planning_wall_time=log.planning_wall_time,
        acceleration_ratio=log.sim_time / wall if wall > 0 else math.inf,
    )
