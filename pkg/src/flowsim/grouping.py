"""Interaction matrix construction, vehicle grouping and decision staging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import FlowState, FlowVehicle, IntentionKind, LANE_CHANGE_KINDS, RoadNetwork


@dataclass(frozen=True)
class GroupingConfig:
    n_limit: int = 3
    lookahead_steps: int = 2  # decision steps considered for interaction
    dt_decision: float = 1.5
    a_acc: float = 0.6
    a_dcc: float = 0.6
    msd: float = 2.0  # minimum safe distance, metres

    def __post_init__(self):
        if self.n_limit < 1:
            raise ValueError("n_limit must be >= 1")
        for name in ("lookahead_steps", "dt_decision", "a_acc", "a_dcc", "msd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class InteractionMatrix:
    ids: tuple[int, ...]  # vehicle ids sorted by aligned s, decreasing
    bits: np.ndarray  # symmetric boolean matrix, zero diagonal

    def pair(self, vid_a: int, vid_b: int) -> bool:
        ia = self.ids.index(vid_a)
        ib = self.ids.index(vid_b)
        return bool(self.bits[ia, ib])


@dataclass(frozen=True)
class Group:
    index: int  # 1-based creation index
    member_ids: tuple[int, ...]


@dataclass(frozen=True)
class GroupingResult:
    groups: tuple[Group, ...]
    stages: tuple[tuple[int, ...], ...] = ()


def safety_distance(v_leader: float, v_follower: float, cfg: GroupingConfig) -> float:
    """Minimum longitudinal gap that rules out interaction over the look-ahead.

    Assumes the leader brakes at a_dcc while the follower accelerates at
    a_acc for lookahead_steps decision steps.
    """
    if v_follower < v_leader:
        return cfg.msd
    horizon = cfg.lookahead_steps * cfg.dt_decision
    return ((v_follower - v_leader) * horizon
            + 0.5 * (cfg.a_acc + cfg.a_dcc) * horizon ** 2
            + cfg.msd)


def _reachable_lanes(vehicle: FlowVehicle, road: RoadNetwork) -> set[str]:
    lane = vehicle.state.lane_id
    kind = vehicle.intention.kind
    lanes = {lane}
    if kind in LANE_CHANGE_KINDS:
        if vehicle.intention.target_lane_id:
            lanes.add(vehicle.intention.target_lane_id)
    elif kind is IntentionKind.OVERTAKE:
        for nb in road.adjacency[lane]:
            if nb is not None:
                lanes.add(nb)
        if vehicle.intention.origin_lane_id:
            lanes.add(vehicle.intention.origin_lane_id)
    return lanes


def _in_shared_merge_zone(leader: FlowVehicle, follower: FlowVehicle,
                          road: RoadNetwork) -> bool:
    for a, b in ((leader, follower), (follower, leader)):
        for zone in road.zones_for(a.state.lane_id):
            if b.state.lane_id not in (zone.ramp_lane_id, zone.main_lane_id):
                continue
            if road.in_merge_zone(a.state.lane_id, a.state.s, zone) and \
               road.in_merge_zone(b.state.lane_id, b.state.s, zone):
                return True
    return False


def no_interaction(leader: FlowVehicle, follower: FlowVehicle,
                   road: RoadNetwork, cfg: GroupingConfig) -> bool:
    """Whether the (leader, follower) pair can be ruled out of interacting.

    The leader must be longitudinally at or ahead of the follower in the
    shared frame.
    """
    # disconnected road sections
    if not road.same_section(leader.state.lane_id, follower.state.lane_id):
        return True
    gap = (road.aligned_s(leader.state.lane_id, leader.state.s)
           - road.aligned_s(follower.state.lane_id, follower.state.s))
    if gap > safety_distance(leader.state.s_dot, follower.state.s_dot, cfg):
        return True
    # parallel lane keeping in different lanes
    if (leader.intention.kind is IntentionKind.KEEP_LANE
            and follower.intention.kind is IntentionKind.KEEP_LANE
            and leader.state.lane_id != follower.state.lane_id):
        return True
    # disjoint intention footprints, outside any shared merge zone
    if not (_reachable_lanes(leader, road) & _reachable_lanes(follower, road)):
        if not _in_shared_merge_zone(leader, follower, road):
            return True
    return False


def _is_overtake_pair(a: FlowVehicle, b: FlowVehicle) -> bool:
    return ((a.intention.kind is IntentionKind.OVERTAKE
             and a.intention.target_vehicle_id == b.spec.id)
            or (b.intention.kind is IntentionKind.OVERTAKE
                and b.intention.target_vehicle_id == a.spec.id))


def sort_by_aligned_s(flow: FlowState, road: RoadNetwork) -> list[FlowVehicle]:
    return sorted(flow.vehicles,
                  key=lambda v: -road.aligned_s(v.state.lane_id, v.state.s))


def judge_interaction(flow: FlowState, road: RoadNetwork,
                      cfg: GroupingConfig) -> InteractionMatrix:
    """Pairwise interaction possibility over the whole flow.

    Vehicles are sorted by shared-frame arc length, decreasing; the matrix
    rows/columns follow that order. Overtake pairs are always marked.
    """
    order = sort_by_aligned_s(flow, road)
    n = len(order)
    bits = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            interacting = not no_interaction(order[i], order[j], road, cfg)
            if _is_overtake_pair(order[i], order[j]):
                interacting = True
            bits[i, j] = bits[j, i] = interacting
    return InteractionMatrix(ids=tuple(v.spec.id for v in order), bits=bits)


def group(matrix: InteractionMatrix, flow: FlowState,
          cfg: GroupingConfig) -> GroupingResult:
    """Partition the controlled vehicles into groups of at most n_limit.

    Each vehicle joins the group of its nearest preceding interacting
    vehicle whose group is not yet full; full groups are skipped and the
    search continues further ahead. Uncontrolled vehicles never join groups.
    """
    controlled = [i for i, vid in enumerate(matrix.ids)
                  if flow.get(vid).spec.controlled]
    groups: list[list[int]] = []
    group_of: dict[int, int] = {}  # matrix row -> group list index
    for pos, row in enumerate(controlled):
        assigned = None
        for prev in reversed(controlled[:pos]):
            gidx = group_of[prev]
            if len(groups[gidx]) >= cfg.n_limit:
                continue
            if not matrix.bits[row, prev]:
                continue
            assigned = gidx
            break
        if assigned is None:
            assigned = len(groups)
            groups.append([])
        groups[assigned].append(matrix.ids[row])
        group_of[row] = assigned
    return GroupingResult(groups=tuple(
        Group(index=i + 1, member_ids=tuple(members))
        for i, members in enumerate(groups)))


def build_stages(grouping: GroupingResult, matrix: InteractionMatrix) -> GroupingResult:
    """Order groups into stages: interacting groups decide sequentially,
    independent groups share a stage."""
    groups = grouping.groups
    row_of = {vid: i for i, vid in enumerate(matrix.ids)}
    n = len(groups)
    preds: list[list[int]] = [[] for _ in range(n)]
    for a in range(n):
        for b in range(a + 1, n):
            rows_a = [row_of[vid] for vid in groups[a].member_ids]
            rows_b = [row_of[vid] for vid in groups[b].member_ids]
            if any(matrix.bits[ra, rb] for ra in rows_a for rb in rows_b):
                preds[b].append(a)

    level = [0] * n
    for b in range(n):  # preds reference smaller indices only
        if preds[b]:
            level[b] = 1 + max(level[a] for a in preds[b])
    stages = []
    for lvl in range(max(level, default=-1) + 1):
        stages.append(tuple(g.index for i, g in enumerate(groups) if level[i] == lvl))
    return GroupingResult(groups=groups, stages=tuple(stages))
