"""Reference deciders the grouped search is compared against.

Both expose the engine decider signature
(flow, road, engine_cfg, round_seed) -> (GroupingResult, outcomes).
"""

from __future__ import annotations

import numpy as np

from .grouping import Group, GroupingResult, judge_interaction, sort_by_aligned_s
from .mcts import Action, decide_group
from .scenario import FlowState, RoadNetwork


def fine_grained_actions(accels=(-1.0, 0.0, 1.0), lat_speed=1.2,
                         dt=1.5) -> tuple[Action, ...]:
    """Per-vehicle action set for the single-vehicle baseline: three
    accelerations crossed with three lateral velocities, so one lane
    change spans two decision steps."""
    mag = lat_speed * dt
    out = []
    for a in accels:
        tag = "A%+d" % round(a)
        out.append(Action(f"{tag}/L0", a))
        out.append(Action(f"{tag}/LL", a, lat_sign=+1, lat_mag=mag))
        out.append(Action(f"{tag}/LR", a, lat_sign=-1, lat_mag=mag))
    return tuple(out)


def sequential_decider(flow: FlowState, road: RoadNetwork, cfg, round_seed: int):
    """Every controlled vehicle searches alone over a finer action set;
    vehicles decide strictly one after another, front to back, each seeing
    all earlier commitments."""
    order = [v.spec.id for v in sort_by_aligned_s(flow, road) if v.spec.controlled]
    groups = tuple(Group(index=i + 1, member_ids=(vid,))
                   for i, vid in enumerate(order))
    grouping = GroupingResult(groups=groups,
                              stages=tuple((g.index,) for g in groups))
    actions = {vid: fine_grained_actions() for vid in order}
    # every vehicle runs its own full-budget search; the cost of deciding
    # sequentially scales with the number of vehicles
    budget = cfg.total_budget or cfg.search.iteration_budget
    committed: dict = {}
    outcomes = {}
    for g in groups:
        vid = g.member_ids[0]
        rng = np.random.default_rng([round_seed & 0x7FFFFFFF, g.index])
        outcome = decide_group((vid,), flow, road, cfg.search, rng,
                               committed=dict(committed), budget=budget,
                               actions_by_vid=actions)
        outcomes[g.index] = outcome
        committed[vid] = outcome.actions[vid]
    return grouping, outcomes


def random_grouped_decider(flow: FlowState, road: RoadNetwork, cfg, round_seed: int):
    """Partition by uniform random group indices, ignoring the interaction
    structure; group sizes are unbounded."""
    rng = np.random.default_rng([round_seed & 0x7FFFFFFF, 0xBEEF])
    vids = sorted(v.spec.id for v in flow.vehicles if v.spec.controlled)
    labels = rng.integers(1, len(vids) + 1, size=len(vids)) if vids else []
    members: dict[int, list[int]] = {}
    for vid, lab in zip(vids, labels):
        members.setdefault(int(lab), []).append(vid)
    groups = tuple(Group(index=i + 1, member_ids=tuple(sorted(ms)))
                   for i, (_, ms) in enumerate(sorted(members.items())))
    grouping = GroupingResult(groups=groups,
                              stages=tuple((g.index,) for g in groups))
    committed: dict = {}
    outcomes = {}
    n_controlled = max(len(vids), 1)
    total = cfg.total_budget or cfg.search.iteration_budget * n_controlled
    for g in groups:
        share = max(1, int(total * len(g.member_ids) / n_controlled))
        grng = np.random.default_rng([round_seed & 0x7FFFFFFF, g.index])
        outcome = decide_group(g.member_ids, flow, road, cfg.search, grng,
                               committed=dict(committed), budget=share)
        outcomes[g.index] = outcome
        for vid, seq in outcome.actions.items():
            committed[vid] = seq
    return grouping, outcomes
