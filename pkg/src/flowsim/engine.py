"""Closed-loop simulation: staged group decisions at an adaptive period,
trajectory refinement at a fixed replanning period, simulation at 0.1 s.

The engine advances every vehicle along its current sampled trajectory,
replans all controlled vehicles every t_planning seconds, and re-decides
either when the adaptive re-decision timer expires or immediately after a
planning fallback.
"""

from __future__ import annotations

import csv
import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from .grouping import GroupingConfig, GroupingResult, build_stages, group, judge_interaction
from .mcts import Action, SearchConfig, decide_all
from .planner import (CostWeights, PlannerConfig, SampledPath, plan_vehicle,
                      predict_committed, predict_uncontrolled)
from .scenario import (DrivingIntention, FlowState, FlowVehicle, FrenetState,
                       IntentionKind, RoadNetwork, Scenario, resolve_intention)


@dataclass(frozen=True)
class EngineConfig:
    dt_sim: float = 0.1
    t_planning: float = 0.3
    t_min: float = 1.5
    t_max: float = 6.0
    duration: float = 60.0
    seed: int = 0
    total_budget: int | None = None  # per decision round; None -> search budget
    grouping: GroupingConfig = field(default_factory=GroupingConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    weights: CostWeights = field(default_factory=CostWeights)
    reassign_intentions: bool = False

    def __post_init__(self):
        if self.t_min > self.t_max:
            raise ValueError("t_min must not exceed t_max")
        ratio = self.t_planning / self.dt_sim
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("t_planning must be a multiple of dt_sim")


def next_redecision_period(n_finish: int, n_need: int, cfg: EngineConfig) -> float:
    """Adaptive re-decision period: confident rounds run longer open-loop."""
    gamma = 1.0 if n_need == 0 else n_finish / n_need
    period = cfg.t_min + gamma * (cfg.t_max - cfg.t_min)
    return math.floor(period / cfg.dt_sim + 1e-9) * cfg.dt_sim


@dataclass
class DecisionEvent:
    time: float
    n_groups: int
    n_stages: int
    group_sizes: list[int]
    n_need: int
    n_finish: int
    gamma: float
    period: float
    expanded_nodes: int
    iterations: int
    avail_actions_sum: float
    avail_actions_nodes: int
    wall_time: float


@dataclass
class SimulationLog:
    scenario: str
    seed: int
    rows: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    finish_times: dict = field(default_factory=dict)
    collisions: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)
    exited: dict = field(default_factory=dict)
    decision_wall_time: float = 0.0
    planning_wall_time: float = 0.0
    sim_time: float = 0.0

    COLUMNS = ("time", "id", "x", "y", "s", "d", "v", "a", "heading", "lane")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(self.COLUMNS)
            for row in self.rows:
                out.writerow([f"{row[0]:.1f}", row[1]]
                             + [f"{x:.6f}" for x in row[2:9]] + [row[9]])

    def metadata(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "sim_time": self.sim_time,
            "vehicles": sorted({r[1] for r in self.rows}),
            "collisions": len(self.collisions),
            "fallbacks": len(self.fallbacks),
            "decision_rounds": len(self.decisions),
            "decision_wall_time": self.decision_wall_time,
            "planning_wall_time": self.planning_wall_time,
        }


def staged_group_decider(flow: FlowState, road: RoadNetwork, cfg: EngineConfig,
                         round_seed: int):
    """Default decision pipeline: interaction matrix, grouping, staging,
    one joint-action search per group."""
    matrix = judge_interaction(flow, road, cfg.grouping)
    grouping = build_stages(group(matrix, flow, cfg.grouping), matrix)
    n_controlled = sum(len(g.member_ids) for g in grouping.groups)
    total = cfg.total_budget or cfg.search.iteration_budget * max(n_controlled, 1)
    outcomes = decide_all(grouping, flow, road, cfg.search, master_seed=round_seed,
                          total_budget=total)
    return grouping, outcomes


@dataclass
class _VehicleRec:
    spec: object
    intention: DrivingIntention
    state: FrenetState
    path: SampledPath | None = None
    actions: tuple[Action, ...] = ()
    decision_time: float = 0.0
    decision_success: bool = True
    intention_done: bool = False
    intention_time: float = 0.0
    section: int = 0

    def flow_vehicle(self) -> FlowVehicle:
        return FlowVehicle(spec=self.spec, state=self.state,
                           intention=self.intention,
                           intention_done=self.intention_done,
                           intention_time=self.intention_time)


class Engine:
    def __init__(self, scenario: Scenario, cfg: EngineConfig,
                 decider=staged_group_decider, arrivals=()):
        self.scenario = scenario
        self.road = scenario.road
        self.cfg = cfg
        self.decider = decider
        self.rng = np.random.default_rng(cfg.seed)
        self.vehicles: dict[int, _VehicleRec] = {}
        for v in scenario.flow.vehicles:
            self.vehicles[v.spec.id] = _VehicleRec(
                spec=v.spec, intention=v.intention, state=v.state,
                intention_time=v.intention_time,
                section=self.road.section_of(v.state.lane_id))
        self.arrivals = sorted(arrivals, key=lambda a: a[0])
        self.time = 0.0
        self.next_redecision = 0.0
        self.round_index = 0
        self.emergency = False
        self.log = SimulationLog(scenario=scenario.name, seed=cfg.seed)

    # ------------------------------------------------------------------
    def flow(self) -> FlowState:
        return FlowState(time=self.time,
                         vehicles=tuple(r.flow_vehicle()
                                        for r in self.vehicles.values()))

    def run(self) -> SimulationLog:
        cfg = self.cfg
        self._admit_arrivals()
        self._decide()
        self._replan()
        self._log_states()
        n_steps = int(round(cfg.duration / cfg.dt_sim))
        plan_every = int(round(cfg.t_planning / cfg.dt_sim))
        for k in range(1, n_steps + 1):
            self.time = round(k * cfg.dt_sim, 9)
            self._advance()
            self._check_collisions()
            self._log_states()
            if not self.vehicles and not self.arrivals:
                break
            if k % plan_every == 0:
                self._admit_arrivals()
                self._update_intentions()
                if self.emergency or self.time + 1e-9 >= self.next_redecision:
                    self._decide()
                self._replan()
        self.log.sim_time = self.time
        return self.log

    # ------------------------------------------------------------------
    def _advance(self):
        gone = []
        for vid, rec in self.vehicles.items():
            if rec.path is not None:
                rec.state = rec.path.state_at(self.time)
            lane = self.road.lanes[rec.state.lane_id]
            if rec.state.s > lane.length and not self.road.connections.get(rec.state.lane_id):
                gone.append(vid)
        for vid in gone:
            self.log.exited[vid] = self.time
            del self.vehicles[vid]

    def _admit_arrivals(self):
        while self.arrivals and self.arrivals[0][0] <= self.time + 1e-9:
            _, veh = self.arrivals[0]
            if not self._entry_clear(veh):
                # entry blocked: retry at the next planning boundary
                self.arrivals[0] = (self.time + self.cfg.t_planning, veh)
                self.arrivals.sort(key=lambda a: a[0])
                if self.arrivals[0][0] > self.time + 1e-9:
                    break
                continue
            self.arrivals.pop(0)
            self.vehicles[veh.spec.id] = _VehicleRec(
                spec=veh.spec, intention=veh.intention, state=veh.state,
                intention_time=self.time,
                section=self.road.section_of(veh.state.lane_id))

    def _entry_clear(self, veh: FlowVehicle, gap: float = 10.0) -> bool:
        lon = self.road.aligned_s(veh.state.lane_id, veh.state.s)
        lat = self.road.lateral_offset(veh.state.lane_id) + veh.state.d
        for rec in self.vehicles.values():
            olon = self.road.aligned_s(rec.state.lane_id, rec.state.s)
            olat = self.road.lateral_offset(rec.state.lane_id) + rec.state.d
            if abs(lat - olat) < 2.0 and abs(lon - olon) < gap + veh.spec.length:
                return False
        return True

    def _update_intentions(self):
        flow = self.flow()
        for vid, rec in self.vehicles.items():
            if rec.spec.controlled and not rec.intention_done:
                if self._intention_complete(rec, flow):
                    rec.intention_done = True
                    # finish time counts from when the intention was assigned
                    self.log.finish_times.setdefault(
                        vid, self.time - rec.intention_time)
                    rec.intention = resolve_intention(
                        IntentionKind.KEEP_LANE, rec.state.lane_id, self.road)
            section = self.road.section_of(rec.state.lane_id)
            if section != rec.section:
                rec.section = section
                if self.cfg.reassign_intentions and rec.spec.controlled:
                    self._assign_fresh_intention(rec)

    def _intention_complete(self, rec: _VehicleRec, flow: FlowState) -> bool:
        from .scenario import MissingTarget, intention_complete
        try:
            return intention_complete(rec.flow_vehicle(), flow, self.road)
        except MissingTarget:
            return True  # overtake target left the scenario

    def _assign_fresh_intention(self, rec: _VehicleRec):
        choices = self.scenario.intention_choices.get(rec.state.lane_id)
        if not choices:
            return
        kind = IntentionKind(self.rng.choice(choices))
        try:
            rec.intention = resolve_intention(kind, rec.state.lane_id, self.road)
        except Exception:
            rec.intention = resolve_intention(
                IntentionKind.KEEP_LANE, rec.state.lane_id, self.road)
        rec.intention_done = False
        rec.intention_time = self.time

    # ------------------------------------------------------------------
    def _decide(self):
        cfg = self.cfg
        flow = self.flow()
        need = [vid for vid, rec in self.vehicles.items()
                if rec.spec.controlled and not rec.intention_done]
        t0 = _time.perf_counter()
        round_seed = cfg.seed * 1_000_003 + self.round_index
        grouping, outcomes = self.decider(flow, self.road, cfg, round_seed)
        wall = _time.perf_counter() - t0
        self.log.decision_wall_time += wall
        self.round_index += 1

        n_finish = 0
        for outcome in outcomes.values():
            for vid in outcome.member_ids:
                rec = self.vehicles[vid]
                rec.actions = outcome.actions[vid]
                rec.decision_time = self.time
                rec.decision_success = outcome.success[vid]
                if vid in need and outcome.success[vid]:
                    n_finish += 1
        period = next_redecision_period(n_finish, len(need), cfg)
        self.next_redecision = self.time + period
        self.emergency = False
        self.log.decisions.append(DecisionEvent(
            time=self.time,
            n_groups=len(grouping.groups),
            n_stages=len(grouping.stages),
            group_sizes=[len(g.member_ids) for g in grouping.groups],
            n_need=len(need), n_finish=n_finish,
            gamma=1.0 if not need else n_finish / len(need),
            period=period,
            expanded_nodes=sum(o.expanded_nodes for o in outcomes.values()),
            iterations=sum(o.iterations for o in outcomes.values()),
            avail_actions_sum=sum(o.avail_actions_sum for o in outcomes.values()),
            avail_actions_nodes=sum(o.avail_actions_nodes for o in outcomes.values()),
            wall_time=wall))

    # ------------------------------------------------------------------
    def _remaining_actions(self, rec: _VehicleRec) -> tuple[Action, ...]:
        return self._plan_alignment(rec)[0]

    def _plan_alignment(self, rec: _VehicleRec):
        """Actions still to execute and the time left in the current
        decision step (the duration of the first replanned segment)."""
        dtd = self.cfg.search.dt_decision
        elapsed = self.time - rec.decision_time
        k = int(math.floor(elapsed / dtd + 1e-9))
        remaining = rec.actions[k:] if k < len(rec.actions) else ()
        first_T = dtd - (elapsed - k * dtd)
        return remaining, first_T

    def _replan(self):
        cfg = self.cfg
        t0 = _time.perf_counter()
        controlled = [rec for rec in self.vehicles.values() if rec.spec.controlled]
        controlled.sort(key=lambda r: -self.road.aligned_s(r.state.lane_id, r.state.s))
        preds = {}
        for rec in self.vehicles.values():
            if not rec.spec.controlled:
                path = predict_uncontrolled(rec.spec, rec.state, self.road,
                                            cfg.planner.horizon, cfg.planner.dt_plan,
                                            t0=self.time)
                rec.path = path
                preds[rec.spec.id] = (rec.spec, path)
        # leaders first; each vehicle avoids everyone already replanned plus
        # committed-action rollouts of those still pending
        alignment = {rec.spec.id: self._plan_alignment(rec)
                     for rec in controlled}
        pending = {rec.spec.id: (rec.spec,
                                 predict_committed(rec.spec, rec.state,
                                                   alignment[rec.spec.id][0],
                                                   self.road, cfg.planner,
                                                   cfg.search.dt_decision,
                                                   t0=self.time,
                                                   first_T=alignment[rec.spec.id][1]))
                   for rec in controlled}
        weights = self._weights_for
        any_fallback = False
        for rec in controlled:
            vid = rec.spec.id
            others = [p for ovid, p in preds.items() if ovid != vid]
            others += [p for ovid, p in pending.items() if ovid != vid]
            remaining, first_T = alignment[vid]
            path, fallback = plan_vehicle(
                rec.spec, rec.state, remaining, others,
                weights(rec.spec), self.road, cfg.planner,
                cfg.search.dt_decision, t0=self.time,
                widen=not rec.decision_success, first_T=first_T)
            rec.path = path
            preds[vid] = (rec.spec, path)
            del pending[vid]
            if fallback:
                any_fallback = True
                self.log.fallbacks.append((self.time, vid))
        if any_fallback:
            self.emergency = True  # re-decide at the next planning boundary
        self.log.planning_wall_time += _time.perf_counter() - t0

    def _weights_for(self, spec) -> CostWeights:
        ws = self.scenario.weight_set
        if ws and 0 <= spec.weight_index < len(ws):
            return CostWeights(*ws[spec.weight_index])
        return self.cfg.weights

    # ------------------------------------------------------------------
    def _log_states(self):
        rows = self.log.rows
        for vid in sorted(self.vehicles):
            rec = self.vehicles[vid]
            st = rec.state
            if rec.path is not None:
                i = rec.path.index_at(self.time)
                x, y, h = rec.path.x[i], rec.path.y[i], rec.path.heading[i]
            else:
                from .scenario import cartesian_pose
                x, y, h = cartesian_pose(st, self.road)
            speed = math.hypot(st.s_dot, st.d_dot)
            rows.append((self.time, vid, float(x), float(y), st.s, st.d,
                         speed, st.s_ddot, float(h), st.lane_id))

    def _check_collisions(self):
        recs = sorted(self.vehicles.values(),
                      key=lambda r: self.road.aligned_s(r.state.lane_id, r.state.s))
        n = len(recs)
        for i in range(n):
            a = recs[i]
            lon_a = self.road.aligned_s(a.state.lane_id, a.state.s)
            lat_a = self.road.lateral_offset(a.state.lane_id) + a.state.d
            for j in range(i + 1, n):
                b = recs[j]
                lon_b = self.road.aligned_s(b.state.lane_id, b.state.s)
                if lon_b - lon_a > 0.5 * (a.spec.length + b.spec.length):
                    break
                if not self.road.same_section(a.state.lane_id, b.state.lane_id):
                    continue
                lat_b = self.road.lateral_offset(b.state.lane_id) + b.state.d
                if abs(lat_a - lat_b) <= 0.5 * (a.spec.width + b.spec.width):
                    self.log.collisions.append(
                        (self.time, a.spec.id, b.spec.id))


def run_scenario(scenario: Scenario, cfg: EngineConfig,
                 decider=staged_group_decider, arrivals=()) -> SimulationLog:
    return Engine(scenario, cfg, decider=decider, arrivals=arrivals).run()
