"""Joint-action Monte Carlo tree search over vehicle groups.

The search tree nodes carry simultaneous actions for every vehicle in a
group. Decision-level states are kept in a shared road frame
(longitudinal arc length / lateral offset) so collision pruning and
reward evaluation are pure arithmetic; the trajectory planner later does
the exact Cartesian geometry.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .grouping import GroupingResult, safety_distance, GroupingConfig
from .scenario import (FlowState, IntentionKind, LANE_CHANGE_KINDS, RoadNetwork)


class EmptyGroup(Exception):
    pass


class NoFeasiblePath(Exception):
    pass


@dataclass(frozen=True)
class Action:
    """One decision-step maneuver: constant acceleration plus a lateral shift.

    lat_mag None means half the current lane width (a partial lane change
    spanning two decision steps).
    """
    name: str
    accel: float
    lat_sign: int = 0
    lat_mag: float | None = None

    def __repr__(self):
        return self.name


def standard_actions(a_acc: float = 0.6, a_dcc: float = 0.6,
                     delta_d: float | None = None) -> tuple[Action, ...]:
    """The five per-step actions: keep speed, accelerate, decelerate,
    partial left / right lane change."""
    return (
        Action("KS", 0.0),
        Action("AC", a_acc),
        Action("DC", -a_dcc),
        Action("LCL", 0.0, lat_sign=+1, lat_mag=delta_d),
        Action("LCR", 0.0, lat_sign=-1, lat_mag=delta_d),
    )


@dataclass(frozen=True)
class SearchConfig:
    dt_decision: float = 1.5
    max_depth: int = 6  # 9 s horizon at the default step
    iteration_budget: int = 400
    uct_constant: float = math.sqrt(2.0)
    delta_d: float | None = None  # None -> half lane width
    a_acc: float = 0.6
    a_dcc: float = 0.6
    # reward shaping; terminal + sum of process weights = 1
    terminal_reward: float = 0.5
    w_speed: float = 0.1
    w_continuity: float = 0.1
    w_centerline: float = 0.1
    w_clearance: float = 0.1
    w_progress: float = 0.1
    clearance_norm: float = 10.0
    others_penalty: float = 0.25
    penalty_range: float = 30.0
    stop_on_success: bool = False
    # slack added to decision-level footprints; covers continuous motion
    # between the coarse decision steps
    collision_margin_lon: float = 2.0
    collision_margin_lat: float = 0.2

    def __post_init__(self):
        if self.max_depth < 1 or self.iteration_budget < 1:
            raise ValueError("max_depth and iteration_budget must be >= 1")
        if self.dt_decision <= 0:
            raise ValueError("dt_decision must be positive")

    def actions(self) -> tuple[Action, ...]:
        return standard_actions(self.a_acc, self.a_dcc, self.delta_d)


@dataclass(frozen=True)
class DecState:
    """Decision-level vehicle state: lane, arc length in the lane frame,
    speed and lateral offset from the lane center."""
    lane: str
    s: float
    v: float
    d: float = 0.0


@dataclass
class DecisionOutcome:
    member_ids: tuple[int, ...]
    actions: dict[int, tuple[Action, ...]]
    finish_step: dict[int, int | None]
    success: dict[int, bool]
    states: dict[int, tuple[DecState, ...]]  # per-step snapshots incl. depth 0
    best_reward: float = 0.0
    expanded_nodes: int = 0
    iterations: int = 0
    avail_actions_sum: float = 0.0  # joint candidate space, summed over nodes
    avail_actions_nodes: int = 0


@dataclass
class _LaneInfo:
    lon0: float
    lat0: float
    width: float
    length: float
    left: str | None
    right: str | None
    downstream: tuple[str, ...]


class DecisionContext:
    """Immutable inputs of one group search: member specs/intentions plus
    per-depth predicted states of all other relevant vehicles."""

    def __init__(self, member_ids, flow: FlowState, road: RoadNetwork,
                 cfg: SearchConfig, committed: dict | None = None,
                 actions_by_vid: dict | None = None):
        if not member_ids:
            raise EmptyGroup("decision group has no members")
        self.cfg = cfg
        self.road = road
        self.members = tuple(member_ids)
        self.lanes: dict[str, _LaneInfo] = {}
        for lid, lane in road.lanes.items():
            self.lanes[lid] = _LaneInfo(
                lon0=road.aligned_s(lid, 0.0),
                lat0=road.lateral_offset(lid),
                width=lane.width,
                length=lane.length,
                left=road.left_of(lid),
                right=road.right_of(lid),
                downstream=tuple(road.connections.get(lid, ())),
            )
        # lateral moves on an acceleration lane are only legal inside its
        # merge section (solid line upstream of the gore)
        self._merge_gate: dict[str, float] = {}
        for lid in road.ramps:
            for zone in road.zones_for(lid):
                if zone.ramp_lane_id == lid:
                    self._merge_gate[lid] = (road.lanes[lid].length
                                             - zone.ramp_extent)
        self.spec = {v.spec.id: v.spec for v in flow.vehicles}
        self.intent = {v.spec.id: v.intention for v in flow.vehicles}
        self.intent_done = {v.spec.id: v.intention_done for v in flow.vehicles}
        self.actions = dict(actions_by_vid or {})
        default_actions = cfg.actions()
        for vid in self.members:
            self.actions.setdefault(vid, default_actions)

        self.init_states = {
            v.spec.id: DecState(v.state.lane_id, v.state.s, v.state.s_dot, v.state.d)
            for v in flow.vehicles}
        member_lons = [self.lon(self.init_states[m]) for m in self.members]
        sections = {road.section_of(self.init_states[m].lane) for m in self.members}

        # predicted background: committed vehicles replay their decided
        # actions until exhausted, everyone else keeps its lane and speed
        committed = committed or {}
        horizon_reach = (cfg.max_depth * cfg.dt_decision
                         * max([s.v for s in self.init_states.values()] + [10.0])
                         + 60.0)
        self.bg_ids = []
        for v in flow.vehicles:
            vid = v.spec.id
            if vid in self.members:
                continue
            st = self.init_states[vid]
            if road.section_of(st.lane) not in sections:
                continue
            lon = self.lon(st)
            if min(abs(lon - m) for m in member_lons) > horizon_reach:
                continue
            self.bg_ids.append(vid)
        self.bg_states: list[dict[int, DecState]] = [
            {vid: self.init_states[vid] for vid in self.bg_ids}]
        self.bg_actions: list[dict[int, Action]] = []
        ks = default_actions[0]
        for depth in range(cfg.max_depth):
            acts, nxt = {}, {}
            for vid in self.bg_ids:
                seq = committed.get(vid)
                act = seq[depth] if seq is not None and depth < len(seq) else ks
                acts[vid] = act
                nxt[vid] = self.apply(self.bg_states[depth][vid], act) or \
                    self.apply(self.bg_states[depth][vid], ks) or \
                    self.bg_states[depth][vid]
            self.bg_actions.append(acts)
            self.bg_states.append(nxt)

    # frame helpers -----------------------------------------------------
    def lon(self, st: DecState) -> float:
        return self.lanes[st.lane].lon0 + st.s

    def lat(self, st: DecState) -> float:
        return self.lanes[st.lane].lat0 + st.d

    def apply(self, st: DecState, action: Action) -> DecState | None:
        """Advance one decision step; None when the action is infeasible
        (lateral move off the road edge)."""
        cfg = self.cfg
        info = self.lanes[st.lane]
        dt = cfg.dt_decision
        dv = action.accel * dt
        if st.v + dv < 0.0:  # velocity floor: stop within the step
            ds = st.v * st.v / (2.0 * abs(action.accel)) if action.accel < 0 else 0.0
            nv = 0.0
        else:
            ds = st.v * dt + 0.5 * dv * dt
            nv = st.v + dv
        if action.lat_sign != 0:
            if action.lat_sign > 0 and info.left is None and st.d >= 0:
                return None
            if action.lat_sign < 0 and info.right is None and st.d <= 0:
                return None
            gate = self._merge_gate.get(st.lane)
            if gate is not None and (st.s < gate or st.s + ds > info.length):
                return None  # outside the merge section, or no runway left
            if action.lat_mag is not None:
                nd = st.d + action.lat_sign * action.lat_mag
            elif st.d * action.lat_sign < -0.3:
                nd = 0.0  # already crossed over: settle on this centerline
            else:
                target = info.left if action.lat_sign > 0 else info.right
                # no neighbor (permitted only because d is off-center):
                # settle on the current centerline
                nd = self.lanes[target].lat0 - info.lat0 if target else 0.0
        else:
            nd = 0.0  # in-lane actions pull back to the centerline
        nxt = self._materialize(info.lon0 + st.s + ds, info.lat0 + nd, nv, st.lane)
        # overrunning the gore of an acceleration lane is not an option
        ninfo = self.lanes[nxt.lane]
        if (nxt.lane in self._merge_gate and nxt.s > ninfo.length
                and not ninfo.downstream):
            return None
        return nxt

    def _materialize(self, lon: float, lat: float, v: float, lane: str) -> DecState:
        info = self.lanes[lane]
        s = lon - info.lon0
        if s > info.length and info.downstream:
            lane = min(info.downstream, key=lambda l: abs(lat - self.lanes[l].lat0))
            info = self.lanes[lane]
            s = lon - info.lon0
        d = lat - info.lat0
        for _ in range(4):  # lateral rebase onto the nearest lane
            info = self.lanes[lane]
            d = lat - info.lat0
            if d > 0.5 * info.width + 1e-9 and info.left:
                lane = info.left
            elif d < -0.5 * info.width - 1e-9 and info.right:
                lane = info.right
            else:
                break
        return DecState(lane, lon - self.lanes[lane].lon0, v, lat - self.lanes[lane].lat0)

    def overlap(self, sa: DecState, la, wa, sb: DecState, lb, wb) -> bool:
        """Axis-aligned footprint overlap in the shared road frame
        (touching counts). A longitudinal margin compensates for the
        coarse decision-step sampling of the continuous motion."""
        m = self.cfg.collision_margin_lon
        if abs(self.lon(sa) - self.lon(sb)) > 0.5 * (la + lb) + m:
            return False
        return (abs(self.lat(sa) - self.lat(sb))
                <= 0.5 * (wa + wb) + self.cfg.collision_margin_lat)

    def clearance(self, sa: DecState, la, wa, sb: DecState, lb, wb) -> float:
        dx = max(abs(self.lon(sa) - self.lon(sb)) - 0.5 * (la + lb), 0.0)
        dy = max(abs(self.lat(sa) - self.lat(sb)) - 0.5 * (wa + wb), 0.0)
        return math.hypot(dx, dy)

    # intention bookkeeping ----------------------------------------------
    def is_complete(self, vid: int, st: DecState, states: dict[int, DecState]) -> bool:
        if self.intent_done.get(vid):
            return True
        intent = self.intent[vid]
        if intent.kind is IntentionKind.KEEP_LANE:
            return True
        if intent.kind in LANE_CHANGE_KINDS:
            target = intent.target_lane_id
            return st.lane == target and abs(st.d) < 0.25 * self.lanes[target].width
        origin = intent.origin_lane_id
        tgt = states.get(intent.target_vehicle_id)
        if tgt is None:
            return False
        on_origin = st.lane == origin and abs(st.d) < 0.25 * self.lanes[origin].width
        return on_origin and self.lon(st) > self.lon(tgt) + self.spec[vid].length

    def _all_states(self, member_states, depth: int) -> dict[int, DecState]:
        states = dict(zip(self.members, member_states))
        states.update(self.bg_states[min(depth, len(self.bg_states) - 1)])
        return states

    def completion(self, member_states, depth: int) -> tuple[bool, ...]:
        states = self._all_states(member_states, depth)
        return tuple(self.is_complete(vid, states[vid], states) for vid in self.members)

    # expansion ----------------------------------------------------------
    def member_options(self, member_states, completed, depth: int):
        """Per-member feasible (action, next state) lists at this depth.

        Filters road-edge lane changes and collisions against predicted
        background vehicles; completed members keep to in-lane actions.
        """
        bg = self.bg_states[min(depth + 1, len(self.bg_states) - 1)]
        bg_now = self.bg_states[min(depth, len(self.bg_states) - 1)]
        options = []
        for i, vid in enumerate(self.members):
            spec = self.spec[vid]
            acts = self.actions[vid]
            if completed[i]:
                acts = [a for a in acts if a.lat_sign == 0]
            # a conflict already present at the parent state cannot be
            # created by the action; exempting it keeps the search able to
            # resolve dense crunches instead of failing outright
            exempt = {bvid for bvid, bst in bg_now.items()
                      if self.overlap(member_states[i], spec.length, spec.width,
                                      bst, self.spec[bvid].length,
                                      self.spec[bvid].width)}
            feasible = []
            for act in acts:
                nxt = self.apply(member_states[i], act)
                if nxt is None:
                    continue
                hit = False
                for bvid, bst in bg.items():
                    if bvid in exempt:
                        continue
                    bspec = self.spec[bvid]
                    if self.overlap(nxt, spec.length, spec.width,
                                    bst, bspec.length, bspec.width):
                        hit = True
                        break
                if not hit:
                    feasible.append((act, nxt))
            options.append(feasible)
        return options

    def joint_actions(self, member_states, completed, depth: int):
        """All collision-free joint actions from this metanode, in a fixed
        deterministic order."""
        options = self.member_options(member_states, completed, depth)
        if any(not opts for opts in options):
            return []
        exempt = self._overlapping_pairs(member_states)
        out = []
        for combo in itertools.product(*options):
            if self._members_clear([st for _, st in combo], exempt):
                out.append((tuple(a for a, _ in combo), tuple(st for _, st in combo)))
        return out

    def _overlapping_pairs(self, states) -> frozenset:
        """Member pairs already in conflict at the given states; such pairs
        are exempt from pruning one step later (overlap hysteresis)."""
        pairs = set()
        n = len(states)
        for i in range(n):
            si = self.spec[self.members[i]]
            for j in range(i + 1, n):
                sj = self.spec[self.members[j]]
                if self.overlap(states[i], si.length, si.width,
                                states[j], sj.length, sj.width):
                    pairs.add((i, j))
        return frozenset(pairs)

    def _members_clear(self, states, exempt: frozenset = frozenset()) -> bool:
        n = len(states)
        for i in range(n):
            si = self.spec[self.members[i]]
            for j in range(i + 1, n):
                if (i, j) in exempt:
                    continue
                sj = self.spec[self.members[j]]
                if self.overlap(states[i], si.length, si.width,
                                states[j], sj.length, sj.width):
                    return False
        return True


# reward functions -------------------------------------------------------

def svo_reward(phi: float, r_self: float, r_others: float) -> float:
    """Social-value-orientation blend of own and others' rewards,
    clamped to [0, 1]."""
    return float(np.clip(math.cos(phi) * r_self + math.sin(phi) * r_others, 0.0, 1.0))


def group_reward(rewards) -> float:
    rewards = list(rewards)
    if not rewards:
        raise EmptyGroup("group reward of an empty group")
    return float(sum(rewards) / len(rewards))


def path_reward(ctx: DecisionContext, states_seq, actions_seq) -> tuple[float, list[float]]:
    """Reward of a complete root-to-terminal path.

    states_seq: member-state tuples per depth (length T+1);
    actions_seq: joint actions per step (length T).
    Deterministic in the path, so exhaustive enumeration can reproduce it.
    """
    cfg = ctx.cfg
    T = len(actions_seq)
    members = ctx.members
    complete_at: list[int | None] = [None] * len(members)
    for depth, mstates in enumerate(states_seq):
        flags = ctx.completion(mstates, depth)
        for i, done in enumerate(flags):
            if done and complete_at[i] is None:
                complete_at[i] = depth

    per_member = []
    for i, vid in enumerate(members):
        spec = ctx.spec[vid]
        if complete_at[i] is not None:
            # earlier completion earns strictly more: full bonus when done
            # after one step, decaying linearly with the completion depth
            k = max(complete_at[i], 1)
            r_terminal = cfg.terminal_reward * (cfg.max_depth - k + 1) / cfg.max_depth
        else:
            r_terminal = 0.0
        if T == 0:
            r_self = r_terminal + (cfg.w_speed + cfg.w_continuity + cfg.w_centerline
                                   + cfg.w_clearance + cfg.w_progress)
            per_member.append(svo_reward(spec.svo_angle, r_self, 0.0))
            continue
        speed = cont = center = clear = progress = 0.0
        penalty = 0.0
        prev_act = None
        for step in range(1, T + 1):
            st = states_seq[step][i]
            act = actions_seq[step - 1][i]
            speed += 1.0 - min(abs(st.v - spec.target_speed)
                               / max(spec.target_speed, 1e-6), 1.0)
            cont += 1.0 if (prev_act is None or act.name == prev_act.name) else 0.0
            prev_act = act
            center += 1.0 - min(abs(st.d) / (0.5 * ctx.lanes[st.lane].width), 1.0)
            clear += min(_nearest_clearance(ctx, i, states_seq[step], step)
                         / cfg.clearance_norm, 1.0)
            progress += 1.0 if (complete_at[i] is not None
                                and step >= complete_at[i]) else 0.0
            penalty -= cfg.others_penalty * _improper_interactions(
                ctx, i, states_seq[step - 1], actions_seq[step - 1], step - 1)
        r_process = (cfg.w_speed * speed + cfg.w_continuity * cont
                     + cfg.w_centerline * center + cfg.w_clearance * clear
                     + cfg.w_progress * progress) / T
        r_others = float(np.clip(penalty, -1.0, 0.0))
        per_member.append(svo_reward(spec.svo_angle, r_terminal + r_process, r_others))
    return group_reward(per_member), per_member


def _nearest_clearance(ctx, i, mstates, depth) -> float:
    vid = ctx.members[i]
    spec = ctx.spec[vid]
    st = mstates[i]
    best = math.inf
    for j, other in enumerate(ctx.members):
        if j == i:
            continue
        o = ctx.spec[other]
        best = min(best, ctx.clearance(st, spec.length, spec.width,
                                       mstates[j], o.length, o.width))
    for bvid, bst in ctx.bg_states[min(depth, len(ctx.bg_states) - 1)].items():
        o = ctx.spec[bvid]
        best = min(best, ctx.clearance(st, spec.length, spec.width,
                                       bst, o.length, o.width))
    return best if best < math.inf else ctx.cfg.clearance_norm


def _improper_interactions(ctx, i, mstates, joint_action, depth) -> int:
    """Count penalty patterns triggered by member i at one decision step."""
    vid = ctx.members[i]
    st = mstates[i]
    act = joint_action[i]
    count = 0
    rng = ctx.cfg.penalty_range

    def others():
        for j, ovid in enumerate(ctx.members):
            if j != i:
                yield ovid, mstates[j], joint_action[j]
        bg_s = ctx.bg_states[min(depth, len(ctx.bg_states) - 1)]
        bg_a = ctx.bg_actions[min(depth, len(ctx.bg_actions) - 1)] \
            if ctx.bg_actions else {}
        for ovid, ost in bg_s.items():
            yield ovid, ost, bg_a.get(ovid)

    # lane change forcing the rear vehicle in the target lane to decelerate
    if act.lat_sign != 0:
        info = ctx.lanes[st.lane]
        target = info.left if act.lat_sign > 0 else info.right
        if target is not None:
            for _, ost, oact in others():
                if ost.lane != target or oact is None or oact.accel >= 0:
                    continue
                gap = ctx.lon(st) - ctx.lon(ost)
                if 0.0 <= gap < rng:
                    count += 1

    # merge-zone misconduct
    for zone in ctx.road.zones_for(st.lane):
        if not ctx.road.in_merge_zone(st.lane, st.s, zone):
            continue
        on_ramp = st.lane == zone.ramp_lane_id
        for ovid, ost, _ in others():
            opposite = zone.ramp_lane_id if not on_ramp else zone.main_lane_id
            if ost.lane != opposite:
                continue
            if not ctx.road.in_merge_zone(ost.lane, ost.s, zone):
                continue
            gap = abs(ctx.lon(st) - ctx.lon(ost))
            if on_ramp:
                # rushing the merge with main-road traffic close behind
                if act.lat_sign != 0 and ctx.lon(ost) < ctx.lon(st) and gap < 0.5 * rng:
                    count += 1
            else:
                # refusing to yield to a merging vehicle
                merging = ctx.intent[ovid].kind is IntentionKind.MERGE_IN
                if merging and act.accel > 0 and gap < 0.5 * rng:
                    count += 1
    return count


# the search tree ---------------------------------------------------------

class MetaNode:
    __slots__ = ("depth", "joint_action", "states", "completed", "children",
                 "untried", "visits", "total", "terminal", "failed")

    def __init__(self, ctx: DecisionContext, depth: int, states,
                 joint_action=None, parent_completed=None):
        self.depth = depth
        self.joint_action = joint_action
        self.states = states
        flags = ctx.completion(states, depth)
        if parent_completed is not None:
            flags = tuple(a or b for a, b in zip(flags, parent_completed))
        self.completed = flags
        self.children: list[MetaNode] = []
        self.untried = None  # lazily filled joint-action list
        self.visits = 0
        self.total = 0.0
        self.terminal = all(flags) or depth >= ctx.cfg.max_depth
        self.failed = False

    def mean(self) -> float:
        return self.total / self.visits if self.visits else 0.0


def uct_select(node: MetaNode, c: float) -> MetaNode:
    """Highest upper-confidence child; ties broken by creation order."""
    log_n = math.log(node.visits)
    best, best_score = None, -math.inf
    for child in node.children:
        score = child.mean() + c * math.sqrt(log_n / child.visits)
        if score > best_score:
            best, best_score = child, score
    return best


def _rollout(ctx, rng, states, completed, depth):
    """Uniform-random default policy from a metanode to a terminal state."""
    cfg = ctx.cfg
    actions_out, states_out = [], []
    while depth < cfg.max_depth and not all(completed):
        options = ctx.member_options(states, completed, depth)
        if any(not opts for opts in options):
            break
        exempt = ctx._overlapping_pairs(states)
        joint = None
        for _ in range(8):  # rejection sampling over the joint product
            pick = [opts[rng.integers(len(opts))] for opts in options]
            if ctx._members_clear([st for _, st in pick], exempt):
                joint = pick
                break
        if joint is None:
            valid = [combo for combo in itertools.product(*options)
                     if ctx._members_clear([st for _, st in combo], exempt)]
            if not valid:
                break
            joint = list(valid[rng.integers(len(valid))])
        actions_out.append(tuple(a for a, _ in joint))
        states = tuple(st for _, st in joint)
        depth += 1
        states_out.append(states)
        flags = ctx.completion(states, depth)
        completed = tuple(a or b for a, b in zip(completed, flags))
    return actions_out, states_out


def decide_group(member_ids, flow: FlowState, road: RoadNetwork,
                 cfg: SearchConfig, rng, committed: dict | None = None,
                 budget: int | None = None,
                 actions_by_vid: dict | None = None) -> DecisionOutcome:
    """Run the joint-action tree search for one group and return the best
    terminal path found.

    committed maps vehicle id -> already-decided action sequence from
    earlier groups, replayed verbatim before falling back to lane keeping.
    """
    ctx = DecisionContext(member_ids, flow, road, cfg, committed=committed,
                          actions_by_vid=actions_by_vid)
    budget = budget if budget is not None else cfg.iteration_budget
    root = MetaNode(ctx, 0, tuple(ctx.init_states[m] for m in ctx.members))

    best_reward = -math.inf
    best_actions: list[tuple[Action, ...]] = []
    best_states: list[tuple[DecState, ...]] = [root.states]
    best_success = all(root.completed)
    expanded = 0
    avail_sum = 0.0
    avail_nodes = 0
    iterations = 0

    if root.terminal and not all(root.completed):
        root.failed = True

    for _ in range(budget):
        iterations += 1
        node, path = root, [root]
        while not node.terminal:
            if node.untried is None:
                node.untried = ctx.joint_actions(node.states, node.completed,
                                                 node.depth)
                avail_sum += len(node.untried)
                avail_nodes += 1
                if not node.untried and not node.children:
                    node.terminal = True
                    node.failed = True
                    break
            if node.untried:
                ja, states = node.untried.pop(0)
                child = MetaNode(ctx, node.depth + 1, states,
                                 joint_action=ja, parent_completed=node.completed)
                node.children.append(child)
                expanded += 1
                path.append(child)
                node = child
                break
            node = uct_select(node, cfg.uct_constant)
            path.append(node)

        tail_actions, tail_states = ([], [])
        if not node.terminal:
            tail_actions, tail_states = _rollout(
                ctx, rng, node.states, node.completed, node.depth)
        states_seq = [n.states for n in path] + tail_states
        actions_seq = [n.joint_action for n in path[1:]] + tail_actions
        reward, _ = path_reward(ctx, states_seq, actions_seq)
        for n in path:
            n.visits += 1
            n.total += reward

        done = [False] * len(ctx.members)
        for depth, mstates in enumerate(states_seq):
            flags = ctx.completion(mstates, depth)
            done = [a or b for a, b in zip(done, flags)]
        all_done = all(done)

        # prefer fully-successful paths, then higher reward
        if (all_done, reward) > (best_success, best_reward):
            best_success = all_done
            best_reward = reward
            best_actions = actions_seq
            best_states = states_seq

        if cfg.stop_on_success and all_done:
            break

    if root.failed and not all(root.completed):
        ks = ctx.actions[ctx.members[0]][0]
        return DecisionOutcome(
            member_ids=ctx.members,
            actions={vid: (ks,) for vid in ctx.members},
            finish_step={vid: None for vid in ctx.members},
            success={vid: False for vid in ctx.members},
            states={vid: (ctx.init_states[vid],) for vid in ctx.members},
            best_reward=0.0, expanded_nodes=expanded, iterations=iterations,
            avail_actions_sum=avail_sum, avail_actions_nodes=avail_nodes)

    finish: dict[int, int | None] = {}
    success: dict[int, bool] = {}
    for i, vid in enumerate(ctx.members):
        step = None
        for depth, mstates in enumerate(best_states):
            if ctx.completion(mstates, depth)[i]:
                step = depth
                break
        finish[vid] = step
        success[vid] = step is not None
    actions = {vid: tuple(ja[i] for ja in best_actions)
               for i, vid in enumerate(ctx.members)}
    states = {vid: tuple(ms[i] for ms in best_states)
              for i, vid in enumerate(ctx.members)}
    return DecisionOutcome(
        member_ids=ctx.members, actions=actions, finish_step=finish,
        success=success, states=states,
        best_reward=max(best_reward, 0.0), expanded_nodes=expanded,
        iterations=iterations, avail_actions_sum=avail_sum,
        avail_actions_nodes=avail_nodes)


def decide_all(grouping: GroupingResult, flow: FlowState, road: RoadNetwork,
               cfg: SearchConfig, master_seed: int,
               total_budget: int | None = None) -> dict[int, DecisionOutcome]:
    """Staged decision over all groups.

    Groups inside one stage see the same committed snapshot (parallel
    semantics); later stages see every earlier group's action sequences.
    The iteration cap is shared across groups proportionally to size.
    """
    total_budget = total_budget if total_budget is not None else cfg.iteration_budget
    n_controlled = sum(len(g.member_ids) for g in grouping.groups)
    outcomes: dict[int, DecisionOutcome] = {}
    committed: dict[int, tuple[Action, ...]] = {}
    groups_by_index = {g.index: g for g in grouping.groups}
    stages = grouping.stages or (tuple(g.index for g in grouping.groups),)
    for stage in stages:
        snapshot = dict(committed)
        stage_results = {}
        for gidx in sorted(stage):
            g = groups_by_index[gidx]
            share = max(1, int(total_budget * len(g.member_ids) / max(n_controlled, 1)))
            rng = np.random.default_rng([int(master_seed) & 0x7FFFFFFF, gidx])
            stage_results[gidx] = decide_group(
                g.member_ids, flow, road, cfg, rng,
                committed=snapshot, budget=share)
        for gidx in sorted(stage):
            outcomes[gidx] = stage_results[gidx]
            for vid, seq in stage_results[gidx].actions.items():
                committed[vid] = seq
    return outcomes
