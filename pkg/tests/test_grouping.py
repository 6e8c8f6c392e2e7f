"""Interaction judgement, partitioning and stage scheduling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsim.grouping import (Group, GroupingConfig, GroupingResult,
                              InteractionMatrix, build_stages, group,
                              judge_interaction, no_interaction,
                              safety_distance, sort_by_aligned_s)
from flowsim.scenario import IntentionKind, scenario_from_dict

CFG = GroupingConfig()


def make_flow(rows, n_lanes=4, length=600.0):
    """rows: (id, lane_index, s, v, intention_kind[, target]) tuples."""
    lane_ids = [f"l{i}" for i in range(n_lanes)]
    doc = {
        "name": "t",
        "lanes": [{"id": lid, "points": [[0, 3.6 * i], [length, 3.6 * i]],
                   "width": 3.6, "speed_limit": 16.0}
                  for i, lid in enumerate(lane_ids)],
        "adjacency": {
            lid: {k: v for k, v in (
                ("left", lane_ids[i + 1] if i + 1 < n_lanes else None),
                ("right", lane_ids[i - 1] if i > 0 else None)) if v}
            for i, lid in enumerate(lane_ids)},
        "vehicles": [],
    }
    for row in rows:
        vid, lane_i, s, v, kind = row[:5]
        entry = {"id": vid, "lane": lane_ids[lane_i], "s": float(s),
                 "v": float(v), "target_speed": 9.0}
        if kind != "KeepLane":
            intent = {"kind": kind}
            if len(row) > 5:
                intent["target_vehicle"] = row[5]
            entry["intention"] = intent
        doc["vehicles"].append(entry)
    return scenario_from_dict(doc)


# safety distance (hand-evaluated values) ---------------------------------

def test_safety_distance_leader_faster():
    assert safety_distance(10.0, 8.0, CFG) == pytest.approx(2.0, abs=1e-9)


def test_safety_distance_equal_speeds():
    # 0 + 0.5*1.2*(1.5*2)/... = v_i*k*dt - v_j*k*dt + 0.5*a*(k*dt)^2 + msd
    assert safety_distance(8.0, 8.0, CFG) == pytest.approx(7.4, abs=1e-9)


def test_safety_distance_follower_faster():
    assert safety_distance(8.0, 10.0, CFG) == pytest.approx(13.4, abs=1e-9)


@given(st.floats(0.0, 30.0), st.floats(0.0, 30.0))
def test_safety_distance_nonnegative_and_monotone(v_lead, v_follow):
    d = safety_distance(v_lead, v_follow, CFG)
    assert d >= CFG.msd - 1e-12
    # a faster follower never shrinks the required distance
    assert safety_distance(v_lead, v_follow + 1.0, CFG) >= d - 1e-9


# pairwise interaction rules ----------------------------------------------

def test_adjacent_lane_keepers_never_interact():
    sc = make_flow([(1, 0, 50, 8, "KeepLane"), (2, 1, 50, 8, "KeepLane")])
    a, b = sc.flow.vehicles
    assert no_interaction(a, b, sc.road, CFG)


def test_same_lane_close_pair_interacts():
    sc = make_flow([(1, 0, 55, 8, "KeepLane"), (2, 0, 50, 8, "KeepLane")])
    lead, follow = sorted(sc.flow.vehicles,
                          key=lambda v: -v.state.s)
    assert not no_interaction(lead, follow, sc.road, CFG)


def test_far_pair_does_not_interact():
    sc = make_flow([(1, 0, 300, 8, "KeepLane"), (2, 0, 50, 8, "KeepLane")])
    lead, follow = sorted(sc.flow.vehicles, key=lambda v: -v.state.s)
    assert no_interaction(lead, follow, sc.road, CFG)


def test_overtake_pair_marked_despite_gap():
    sc = make_flow([(1, 0, 300, 8, "KeepLane"),
                    (2, 0, 100, 8, "Overtake", 1)])
    m = judge_interaction(sc.flow, sc.road, CFG)
    assert m.pair(1, 2)


def test_merge_zone_pair_interacts():
    from flowsim.templates import ramp_scenario
    sc = ramp_scenario(n_vehicles=6, seed=0)
    zone = sc.road.merge_zones[0]
    # place one main vehicle and one merging vehicle inside the zone
    from dataclasses import replace
    main = next(v for v in sc.flow.vehicles if v.state.lane_id == "main")
    ramp = next(v for v in sc.flow.vehicles if v.state.lane_id == "ramp")
    main = replace(main, state=replace(main.state, s=zone.extent[0] + 10.0))
    ramp_len = sc.road.lanes["ramp"].length
    ramp = replace(ramp, state=replace(ramp.state, s=ramp_len - 30.0))
    lead, follow = sorted([main, ramp],
                          key=lambda v: -sc.road.aligned_s(v.state.lane_id,
                                                           v.state.s))
    assert not no_interaction(lead, follow, sc.road, CFG)


def test_matrix_matches_pairwise_oracle():
    sc = make_flow([(1, 0, 80, 9, "KeepLane"), (2, 0, 72, 8, "KeepLane"),
                    (3, 1, 75, 8, "ChangeLaneRight"),
                    (4, 1, 40, 10, "KeepLane"), (5, 2, 74, 8, "KeepLane"),
                    (6, 2, 10, 7, "Overtake", 5)])
    m = judge_interaction(sc.flow, sc.road, CFG)
    order = sort_by_aligned_s(sc.flow, sc.road)
    for i, a in enumerate(order):
        for j, b in enumerate(order):
            if i == j:
                assert not m.bits[i, j]
                continue
            lead, follow = (a, b) if i < j else (b, a)
            want = (not no_interaction(lead, follow, sc.road, CFG)
                    or (a.intention.kind is IntentionKind.OVERTAKE
                        and a.intention.target_vehicle_id == b.spec.id)
                    or (b.intention.kind is IntentionKind.OVERTAKE
                        and b.intention.target_vehicle_id == a.spec.id))
            assert bool(m.bits[i, j]) == want


# partitioning -------------------------------------------------------------

def chain_matrix(n, links, ids=None):
    ids = ids or tuple(range(1, n + 1))
    bits = np.zeros((n, n), dtype=bool)
    for a, b in links:
        bits[a - 1, b - 1] = bits[b - 1, a - 1] = True
    return InteractionMatrix(ids=ids, bits=bits)


def chain_flow(n):
    # spaced so the matrix order equals the id order
    return make_flow([(i + 1, 0, 500 - 20 * i, 8, "KeepLane")
                      for i in range(n)])


def test_chain_grouping_limit_three():
    m = chain_matrix(4, [(1, 2), (2, 3), (3, 4)])
    res = group(m, chain_flow(4).flow, GroupingConfig(n_limit=3))
    assert [g.member_ids for g in res.groups] == [(1, 2, 3), (4,)]


def test_chain_grouping_limit_two():
    m = chain_matrix(4, [(1, 2), (2, 3), (3, 4)])
    res = group(m, chain_flow(4).flow, GroupingConfig(n_limit=2))
    assert [g.member_ids for g in res.groups] == [(1, 2), (3, 4)]


def literal_grouping(matrix, flow, cfg):
    """Line-by-line re-statement of the grouping procedure used as an
    independent oracle: walk vehicles front to back; each joins the group
    of the nearest preceding interacting vehicle with spare capacity."""
    rows = [i for i, vid in enumerate(matrix.ids)
            if flow.get(vid).spec.controlled]
    groups: list[list[int]] = []
    owner: dict[int, int] = {}
    for idx, i in enumerate(rows):
        g = None
        for j in reversed(rows[:idx]):
            if len(groups[owner[j]]) >= cfg.n_limit:
                continue
            if matrix.bits[i, j]:
                g = owner[j]
                break
        if g is None:
            groups.append([])
            g = len(groups) - 1
        groups[g].append(matrix.ids[i])
        owner[i] = g
    return [tuple(g) for g in groups]


@settings(max_examples=1000, deadline=None)
@given(st.data())
def test_grouping_matches_literal_oracle(data):
    n = data.draw(st.integers(1, 9))
    n_limit = data.draw(st.integers(1, 5))
    bits = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            bits[i, j] = bits[j, i] = data.draw(st.booleans())
    flow = chain_flow(n).flow
    m = InteractionMatrix(ids=tuple(range(1, n + 1)), bits=bits)
    cfg = GroupingConfig(n_limit=n_limit)
    res = group(m, flow, cfg)
    got = [g.member_ids for g in res.groups]
    assert got == literal_grouping(m, flow, cfg)
    # partition validity and the size cap
    flat = [vid for g in got for vid in g]
    assert sorted(flat) == list(range(1, n + 1))
    assert all(1 <= len(g) <= n_limit for g in got)


# staging ------------------------------------------------------------------

def test_stage_structure_parallel_and_sequential():
    # dependencies: g1->g2, g3->g4->g5, g6 free
    ids = tuple(range(1, 7))
    bits = np.zeros((6, 6), dtype=bool)
    for a, b in [(1, 2), (3, 4), (4, 5)]:
        bits[a - 1, b - 1] = bits[b - 1, a - 1] = True
    m = InteractionMatrix(ids=ids, bits=bits)
    groups = tuple(Group(index=i + 1, member_ids=(i + 1,)) for i in range(6))
    staged = build_stages(GroupingResult(groups=groups), m)
    assert staged.stages[0] == (1, 3, 6)
    assert staged.stages[1] == (2, 4)
    assert staged.stages[2] == (5,)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_stage_edges_cross_levels_forward(data):
    n = data.draw(st.integers(1, 8))
    bits = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            bits[i, j] = bits[j, i] = data.draw(st.booleans())
    m = InteractionMatrix(ids=tuple(range(1, n + 1)), bits=bits)
    groups = tuple(Group(index=i + 1, member_ids=(i + 1,)) for i in range(n))
    staged = build_stages(GroupingResult(groups=groups), m)
    level = {}
    for lvl, stage in enumerate(staged.stages):
        for gi in stage:
            level[gi] = lvl
    assert sorted(level) == list(range(1, n + 1))
    for a in range(n):
        for b in range(a + 1, n):
            if bits[a, b]:
                assert level[a + 1] != level[b + 1]
