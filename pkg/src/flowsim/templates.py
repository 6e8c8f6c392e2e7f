"""Programmatic scenario generators: on-ramp merge, dense freeway,
roundabout entrance and a two-section network with continuous arrivals."""

from __future__ import annotations

import math

import numpy as np

from .scenario import (FlowVehicle, FrenetState, IntentionKind, Scenario,
                       VehicleSpec, resolve_intention, scenario_from_dict)

LANE_W = 3.6


def _straight(lid, y, x0, x1, speed=16.0, width=LANE_W):
    return {"id": lid, "points": [[x0, y], [x1, y]], "width": width,
            "speed_limit": speed}


def _arc(lid, radius, deg0, deg1, center=(0.0, 0.0), speed=12.0,
         width=LANE_W, step_deg=2.0):
    n = max(int(abs(deg1 - deg0) / step_deg), 2) + 1
    ang = np.radians(np.linspace(deg0, deg1, n))
    pts = np.column_stack([center[0] + radius * np.cos(ang),
                           center[1] + radius * np.sin(ang)])
    return {"id": lid, "points": pts.tolist(), "width": width,
            "speed_limit": speed}


def _place(rng, lanes_s, n, lo, hi, min_gap=12.0):
    """Draw n longitudinal positions on len(lanes_s) lanes with a minimum
    same-lane gap; round-robin over lanes."""
    out = []
    cursors = {k: lo for k in lanes_s}
    keys = list(lanes_s)
    i = 0
    while len(out) < n:
        lane = keys[i % len(keys)]
        s = cursors[lane] + rng.uniform(0.0, 6.0)
        if s > hi:
            i += 1
            continue
        out.append((lane, float(s)))
        cursors[lane] = s + min_gap
        i += 1
    return out


def ramp_scenario(n_vehicles: int = 6, seed: int = 0) -> Scenario:
    """Single main carriageway with an acceleration lane; ramp vehicles
    carry a merge intention."""
    rng = np.random.default_rng(seed)
    n_ramp = max(1, n_vehicles // 3)
    n_main = n_vehicles - n_ramp
    doc = {
        "name": f"ramp{n_vehicles}",
        "lanes": [
            _straight("main", 0.0, 0.0, 400.0, speed=16.0),
            _straight("ramp", -LANE_W, 100.0, 240.0, speed=12.0),
        ],
        "adjacency": {"main": {"right": "ramp"}, "ramp": {"left": "main"}},
        "ramps": ["ramp"],
        "merge_zones": [{"ramp": "ramp", "main": "main",
                         "extent": [140.0, 240.0], "ramp_extent": 100.0}],
        "vehicles": [],
    }
    # a steady platoon rolls alongside the acceleration lane with gaps too
    # small to enter without cooperation
    vid = 1
    s = 105.0 + rng.uniform(0.0, 3.0)
    for _ in range(n_main):
        doc["vehicles"].append({
            "id": vid, "lane": "main", "s": float(s),
            "v": float(rng.uniform(8.0, 8.4)), "target_speed": 8.2})
        s += 12.0 + rng.uniform(0.0, 2.0)
        vid += 1
    s = 5.0 + rng.uniform(0.0, 4.0)
    for _ in range(n_ramp):
        doc["vehicles"].append({
            "id": vid, "lane": "ramp", "s": float(s),
            "v": float(rng.uniform(7.5, 8.5)), "target_speed": 8.8,
            "intention": {"kind": "MergeIn", "target_lane": "main"}})
        s += 12.0 + rng.uniform(0.0, 3.0)
        vid += 1
    return scenario_from_dict(doc)


def freeway_scenario(n_vehicles: int = 10, seed: int = 0,
                     lane_change_prob: float = 0.2) -> Scenario:
    """Four parallel lanes, vehicles packed into a 70 m window, a share of
    them tasked with lane changes."""
    rng = np.random.default_rng(seed)
    lane_ids = [f"f{i}" for i in range(4)]
    doc = {
        "name": f"freeway{n_vehicles}",
        "lanes": [_straight(lid, i * LANE_W, 0.0, 350.0, speed=16.0)
                  for i, lid in enumerate(lane_ids)],
        "adjacency": {
            lid: {"left": lane_ids[i + 1] if i + 1 < 4 else None,
                  "right": lane_ids[i - 1] if i > 0 else None}
            for i, lid in enumerate(lane_ids)},
        "vehicles": [],
    }
    placements = _place(rng, {lid: None for lid in lane_ids},
                        n_vehicles, 20.0, 90.0)
    for vid, (lane, s) in enumerate(placements, start=1):
        entry = {"id": vid, "lane": lane, "s": s,
                 "v": float(rng.uniform(6.0, 8.0)), "target_speed": 10.0}
        if rng.random() < lane_change_prob:
            idx = lane_ids.index(lane)
            options = []
            if idx + 1 < len(lane_ids):
                options.append("ChangeLaneLeft")
            if idx > 0:
                options.append("ChangeLaneRight")
            entry["intention"] = {"kind": str(rng.choice(options))}
        doc["vehicles"].append(entry)
    return scenario_from_dict(doc)


def svo_scenario(svo_angle: float, seed: int = 0) -> Scenario:
    """One vehicle cutting right into a platoon; the cutting vehicle takes
    the given social-value-orientation angle, everyone else stays
    prosocial (45 degrees)."""
    pro = math.pi / 4
    doc = {
        "name": "svo",
        "lanes": [_straight("s0", 0.0, 0.0, 350.0),
                  _straight("s1", LANE_W, 0.0, 350.0)],
        "adjacency": {"s0": {"left": "s1"}, "s1": {"right": "s0"}},
        "vehicles": [
            {"id": 1, "lane": "s1", "s": 49.0, "v": 8.5, "target_speed": 10.0,
             "svo": svo_angle,
             "intention": {"kind": "ChangeLaneRight"}},
            {"id": 2, "lane": "s0", "s": 63.0, "v": 7.5, "target_speed": 8.0,
             "svo": pro},
            {"id": 3, "lane": "s0", "s": 47.0, "v": 8.2, "target_speed": 8.5,
             "svo": pro},
            {"id": 4, "lane": "s0", "s": 25.0, "v": 7.5, "target_speed": 8.5,
             "svo": pro},
            {"id": 5, "lane": "s1", "s": 75.0, "v": 8.0, "target_speed": 8.2,
             "svo": pro},
        ],
    }
    return scenario_from_dict(doc)


def roundabout_scenario(n_vehicles: int = 5, seed: int = 0) -> Scenario:
    """Circulating lane plus an outside entry lane joining it over a short
    arc; entry vehicles merge inward."""
    rng = np.random.default_rng(seed)
    ring = _arc("ring", 30.0, -60.0, 200.0, speed=10.0)
    entry = _arc("entry", 30.0 + LANE_W, -55.0, 15.0, speed=10.0)
    ring_len = 30.0 * math.radians(260.0)
    zone_start = 30.0 * math.radians(5.0)  # entry arc begins at -55 deg
    zone_end = 30.0 * math.radians(75.0)
    doc = {
        "name": "roundabout",
        "lanes": [ring, entry],
        "adjacency": {"ring": {"right": "entry"}, "entry": {"left": "ring"}},
        "ramps": ["entry"],
        "merge_zones": [{"ramp": "entry", "main": "ring",
                         "extent": [zone_start, zone_end],
                         "ramp_extent": 45.0}],
        "vehicles": [],
    }
    n_entry = max(1, n_vehicles // 3)
    vid = 1
    for lane, s in _place(rng, {"ring": None}, n_vehicles - n_entry,
                          10.0, 0.55 * ring_len, min_gap=14.0):
        doc["vehicles"].append({"id": vid, "lane": lane, "s": s,
                                "v": float(rng.uniform(5.0, 7.0)),
                                "target_speed": 8.0})
        vid += 1
    for lane, s in _place(rng, {"entry": None}, n_entry, 0.0, 8.0):
        doc["vehicles"].append({"id": vid, "lane": lane, "s": s,
                                "v": float(rng.uniform(5.0, 6.5)),
                                "target_speed": 8.0,
                                "intention": {"kind": "MergeIn",
                                              "target_lane": "ring"}})
        vid += 1
    return scenario_from_dict(doc)


def network_scenario(seed: int = 0, n_arrivals: int = 20,
                     arrival_period: float = 4.0,
                     lane_change_prob: float = 0.2):
    """Two connected two-lane sections with a continuous inflow.

    Returns (scenario, arrivals); arrivals is a list of (time, FlowVehicle)
    consumed by the engine.
    """
    rng = np.random.default_rng(seed)
    doc = {
        "name": "network",
        "lanes": [
            _straight("a0", 0.0, 0.0, 250.0), _straight("a1", LANE_W, 0.0, 250.0),
            _straight("b0", 0.0, 250.0, 520.0), _straight("b1", LANE_W, 250.0, 520.0),
        ],
        "adjacency": {"a0": {"left": "a1"}, "a1": {"right": "a0"},
                      "b0": {"left": "b1"}, "b1": {"right": "b0"}},
        "connections": {"a0": ["b0"], "a1": ["b1"]},
        "intention_choices": {
            "b0": ["KeepLane", "KeepLane", "KeepLane", "ChangeLaneLeft"],
            "b1": ["KeepLane", "KeepLane", "KeepLane", "ChangeLaneRight"],
        },
        "vehicles": [
            {"id": 1, "lane": "a0", "s": 40.0, "v": 7.0, "target_speed": 9.0},
            {"id": 2, "lane": "a1", "s": 55.0, "v": 7.0, "target_speed": 9.0},
        ],
    }
    scenario = scenario_from_dict(doc)
    road = scenario.road
    arrivals = []
    lanes = ["a0", "a1"]
    next_id = 3
    for k in range(n_arrivals):
        t = round((k // 2 + 1) * arrival_period, 1)
        lane = lanes[k % 2]
        spec = VehicleSpec(id=next_id, length=5.0, width=2.0,
                           target_speed=9.0, svo_angle=math.pi / 4)
        state = FrenetState(lane_id=lane, s=2.0,
                            s_dot=float(rng.uniform(6.0, 8.0)),
                            heading=road.lanes[lane].heading_at(2.0))
        if rng.random() < lane_change_prob:
            kind = (IntentionKind.CHANGE_LANE_LEFT if lane == "a0"
                    else IntentionKind.CHANGE_LANE_RIGHT)
        else:
            kind = IntentionKind.KEEP_LANE
        intention = resolve_intention(kind, lane, road)
        arrivals.append((t, FlowVehicle(spec=spec, state=state,
                                        intention=intention)))
        next_id += 1
    return scenario, arrivals


TEMPLATES = {
    "ramp": lambda **kw: ramp_scenario(**kw),
    "freeway": lambda **kw: freeway_scenario(**kw),
    "svo": lambda **kw: svo_scenario(**kw),
    "roundabout": lambda **kw: roundabout_scenario(**kw),
}
