#!/usr/bin/env python3
"""Write the template scenarios out as YAML files under scenarios/.

The YAML files are self-contained snapshots (fixed seed) of the
programmatic templates, loadable with `flowsim run --scenario <file>`.
"""

from __future__ import annotations

import argparse
import math
import pathlib

import yaml

from flowsim.scenario import IntentionKind, Scenario
from flowsim.templates import (freeway_scenario, ramp_scenario,
                               roundabout_scenario, svo_scenario)


def scenario_to_doc(scenario: Scenario) -> dict:
    road = scenario.road
    doc = {
        "name": scenario.name,
        "lanes": [{
            "id": lane.id,
            "points": [[float(x), float(y)] for x, y in lane.points],
            "width": float(lane.width),
            "speed_limit": float(lane.speed_limit),
        } for lane in road.lanes.values()],
        "adjacency": {
            lid: {k: v for k, v in (("left", road.left_of(lid)),
                                    ("right", road.right_of(lid))) if v}
            for lid in road.lanes if road.left_of(lid) or road.right_of(lid)
        },
        "vehicles": [],
    }
    if road.ramps:
        doc["ramps"] = list(road.ramps)
    if road.merge_zones:
        doc["merge_zones"] = [{
            "ramp": z.ramp_lane_id, "main": z.main_lane_id,
            "extent": [float(z.extent[0]), float(z.extent[1])],
            "ramp_extent": float(z.ramp_extent),
        } for z in road.merge_zones]
    for v in scenario.flow.vehicles:
        entry = {
            "id": v.spec.id, "lane": v.state.lane_id,
            "s": round(float(v.state.s), 3),
            "v": round(float(v.state.s_dot), 3),
            "target_speed": float(v.spec.target_speed),
        }
        if abs(v.spec.svo_angle - math.pi / 4) > 1e-12:
            entry["svo"] = float(v.spec.svo_angle)
        if v.intention.kind is not IntentionKind.KEEP_LANE:
            intent = {"kind": v.intention.kind.value}
            if v.intention.target_lane_id:
                intent["target_lane"] = v.intention.target_lane_id
            entry["intention"] = intent
        doc["vehicles"].append(entry)
    return doc


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="scenarios")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = {
        "ramp6": ramp_scenario(n_vehicles=6, seed=args.seed),
        "ramp9": ramp_scenario(n_vehicles=9, seed=args.seed),
        "freeway10": freeway_scenario(n_vehicles=10, seed=args.seed),
        "roundabout5": roundabout_scenario(n_vehicles=5, seed=args.seed),
        "svo": svo_scenario(math.pi / 4, seed=args.seed),
    }
    for stem, sc in scenarios.items():
        path = out / f"{stem}.yaml"
        path.write_text(yaml.safe_dump(scenario_to_doc(sc), sort_keys=False))
        print("wrote", path)


if __name__ == "__main__":
    main()
