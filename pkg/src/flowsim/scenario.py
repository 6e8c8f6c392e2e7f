"""Road network, vehicle/flow data model, driving intentions and scenario files."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .geometry import LaneGeometry, collide, footprint, from_frenet


class ScenarioError(Exception):
    """Malformed scenario description; the message names the offending field."""


class MissingTarget(Exception):
    """Overtake intention whose target vehicle is absent from the flow."""


class IntentionKind(enum.Enum):
    KEEP_LANE = "KeepLane"
    CHANGE_LANE_LEFT = "ChangeLaneLeft"
    CHANGE_LANE_RIGHT = "ChangeLaneRight"
    MERGE_IN = "MergeIn"
    DRIVE_OUT = "DriveOut"
    OVERTAKE = "Overtake"


LANE_CHANGE_KINDS = {
    IntentionKind.CHANGE_LANE_LEFT,
    IntentionKind.CHANGE_LANE_RIGHT,
    IntentionKind.MERGE_IN,
    IntentionKind.DRIVE_OUT,
}


@dataclass(frozen=True)
class DrivingIntention:
    kind: IntentionKind
    target_vehicle_id: int | None = None
    # resolved at assignment time
    origin_lane_id: str | None = None
    target_lane_id: str | None = None

    def __post_init__(self):
        if self.kind is IntentionKind.OVERTAKE and self.target_vehicle_id is None:
            raise ValueError("Overtake intention requires a target_vehicle_id")
        if self.kind is not IntentionKind.OVERTAKE and self.target_vehicle_id is not None:
            raise ValueError(f"{self.kind.value} intention forbids a target_vehicle_id")


@dataclass(frozen=True)
class MergeZone:
    ramp_lane_id: str
    main_lane_id: str
    extent: tuple[float, float]  # arc-length interval on the main lane
    ramp_extent: float = 30.0  # ramp section length before the merge point

    def __post_init__(self):
        if self.extent[1] <= self.extent[0]:
            raise ValueError("merge zone extent must have positive length")

    def contains(self, lane_id: str, s: float, ramp_length: float) -> bool:
        if lane_id == self.main_lane_id:
            return self.extent[0] <= s <= self.extent[1]
        if lane_id == self.ramp_lane_id:
            return s >= ramp_length - self.ramp_extent
        return False


@dataclass(frozen=True)
class VehicleSpec:
    id: int
    length: float
    width: float
    target_speed: float
    svo_angle: float
    weight_index: int = 0
    controlled: bool = True

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"vehicle {self.id}: dimensions must be positive")
        if not 0.0 <= self.svo_angle <= 2 * np.pi:
            raise ValueError(f"vehicle {self.id}: svo angle outside [0, 2*pi]")


@dataclass(frozen=True)
class FrenetState:
    lane_id: str
    s: float
    s_dot: float
    d: float = 0.0
    d_dot: float = 0.0
    s_ddot: float = 0.0
    d_ddot: float = 0.0
    heading: float = 0.0


@dataclass(frozen=True)
class FlowVehicle:
    spec: VehicleSpec
    state: FrenetState
    intention: DrivingIntention
    intention_done: bool = False
    intention_time: float = 0.0  # simulation time the intention was assigned


@dataclass(frozen=True)
class FlowState:
    time: float
    vehicles: tuple[FlowVehicle, ...]

    def __post_init__(self):
        ids = [v.spec.id for v in self.vehicles]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate vehicle ids in flow")

    def get(self, vid: int) -> FlowVehicle:
        for v in self.vehicles:
            if v.spec.id == vid:
                return v
        raise KeyError(vid)

    def controlled(self) -> list[FlowVehicle]:
        return [v for v in self.vehicles if v.spec.controlled]


class RoadNetwork:
    """Lanes plus adjacency, ramps, merge zones and downstream connections.

    On construction every lane is assigned a shared longitudinal frame
    (component index + arc-length offset) so vehicles on connected lanes
    can be ordered in a single Frenet coordinate.
    """

    def __init__(self, lanes, adjacency, ramps=(), merge_zones=(), connections=None):
        self.lanes: dict[str, LaneGeometry] = {l.id: l for l in lanes}
        self.adjacency: dict[str, tuple[str | None, str | None]] = dict(adjacency)
        self.ramps: set[str] = set(ramps)
        self.merge_zones: list[MergeZone] = list(merge_zones)
        self.connections: dict[str, list[str]] = dict(connections or {})
        self._validate()
        self._offset: dict[str, float] = {}
        self._lat: dict[str, float] = {}
        self._component: dict[str, int] = {}
        self._assign_frames()

    def _validate(self):
        for lid, (left, right) in self.adjacency.items():
            if lid not in self.lanes:
                raise ScenarioError(f"adjacency: unknown lane '{lid}'")
            for nb, side, back in ((left, "left", 1), (right, "right", 0)):
                if nb is None:
                    continue
                if nb not in self.lanes:
                    raise ScenarioError(f"adjacency.{lid}.{side}: unknown lane '{nb}'")
                mutual = self.adjacency.get(nb, (None, None))[back]
                if mutual != lid:
                    raise ScenarioError(
                        f"adjacency.{lid}.{side}: '{nb}' does not reference '{lid}' back")
        for lid in self.lanes:
            self.adjacency.setdefault(lid, (None, None))
        for ramp in self.ramps:
            zones = [z for z in self.merge_zones if z.ramp_lane_id == ramp]
            if len(zones) != 1:
                raise ScenarioError(
                    f"ramps: lane '{ramp}' must reference exactly one merge zone, got {len(zones)}")
        for zone in self.merge_zones:
            for lid in (zone.ramp_lane_id, zone.main_lane_id):
                if lid not in self.lanes:
                    raise ScenarioError(f"merge_zones: unknown lane '{lid}'")
        for lid, downs in self.connections.items():
            if lid not in self.lanes:
                raise ScenarioError(f"connections: unknown lane '{lid}'")
            for down in downs:
                if down not in self.lanes:
                    raise ScenarioError(f"connections.{lid}: unknown lane '{down}'")

    def _assign_frames(self):
        """Give every lane a (longitudinal, lateral) offset in a frame shared
        across its connected road section, derived from projecting lane
        reference points onto their neighbors."""
        from .geometry import NoProjection, to_frenet

        edges: dict[str, list[tuple[str, float, float]]] = {lid: [] for lid in self.lanes}

        def link(a, b, dlon, dlat):
            edges[a].append((b, dlon, dlat))
            edges[b].append((a, -dlon, -dlat))

        seen = set()
        for lid, (left, right) in self.adjacency.items():
            for nb, sign in ((left, 1.0), (right, -1.0)):
                if not nb or (nb, lid) in seen:
                    continue
                seen.add((lid, nb))
                lane_a, lane_b = self.lanes[lid], self.lanes[nb]
                try:
                    s_a, d, _ = to_frenet(lane_b.points[0], lane_a)
                    link(lid, nb, s_a, d)
                except NoProjection:
                    link(lid, nb, 0.0,
                         sign * 0.5 * (lane_a.width + lane_b.width))
        for zone in self.merge_zones:
            ramp = self.lanes[zone.ramp_lane_id]
            main = self.lanes[zone.main_lane_id]
            try:
                s_m, d, _ = to_frenet(ramp.points[-1], main)
                link(zone.main_lane_id, zone.ramp_lane_id, s_m - ramp.length, d)
            except NoProjection:
                link(zone.main_lane_id, zone.ramp_lane_id,
                     zone.extent[1] - ramp.length,
                     -0.5 * (main.width + ramp.width))
        for lid, downs in self.connections.items():
            up = self.lanes[lid]
            for down in downs:
                lane_down = self.lanes[down]
                try:
                    s_v, d, _ = to_frenet(up.points[-1], lane_down)
                    link(lid, down, up.length - s_v, -d)
                except NoProjection:
                    link(lid, down, up.length, 0.0)

        comp = 0
        for root in self.lanes:
            if root in self._component:
                continue
            self._component[root] = comp
            self._offset[root] = 0.0
            self._lat[root] = 0.0
            stack = [root]
            while stack:
                cur = stack.pop()
                for nb, dlon, dlat in edges[cur]:
                    if nb not in self._component:
                        self._component[nb] = comp
                        self._offset[nb] = self._offset[cur] + dlon
                        self._lat[nb] = self._lat[cur] + dlat
                        stack.append(nb)
            comp += 1

    def left_of(self, lane_id: str) -> str | None:
        return self.adjacency[lane_id][0]

    def right_of(self, lane_id: str) -> str | None:
        return self.adjacency[lane_id][1]

    def same_section(self, lane_a: str, lane_b: str) -> bool:
        return self._component[lane_a] == self._component[lane_b]

    def aligned_s(self, lane_id: str, s: float) -> float:
        """Arc length in the shared frame of the lane's road section."""
        return self._offset[lane_id] + s

    def lateral_offset(self, lane_id: str) -> float:
        """Lateral position of the lane center in the shared frame
        (left-positive)."""
        return self._lat[lane_id]

    def section_of(self, lane_id: str) -> int:
        return self._component[lane_id]

    def zones_for(self, lane_id: str) -> list[MergeZone]:
        return [z for z in self.merge_zones
                if lane_id in (z.ramp_lane_id, z.main_lane_id)]

    def in_merge_zone(self, lane_id: str, s: float, zone: MergeZone) -> bool:
        if lane_id == zone.ramp_lane_id:
            return zone.contains(lane_id, s, self.lanes[lane_id].length)
        return zone.contains(lane_id, s, 0.0)


@dataclass
class Scenario:
    name: str
    road: RoadNetwork
    flow: FlowState
    weight_set: list[list[float]] = field(default_factory=list)
    intention_choices: dict[str, list[str]] = field(default_factory=dict)


def cartesian_pose(state: FrenetState, road: RoadNetwork):
    """Cartesian (x, y, heading) of a Frenet state on its lane."""
    lane = road.lanes[state.lane_id]
    point, road_heading = from_frenet(state.s, state.d, lane)
    heading = road_heading
    if state.s_dot > 1e-9:
        heading += float(np.arctan2(state.d_dot, state.s_dot))
    return float(point[0]), float(point[1]), heading


def vehicle_footprint(vehicle: FlowVehicle, road: RoadNetwork) -> np.ndarray:
    x, y, heading = cartesian_pose(vehicle.state, road)
    return footprint(x, y, heading, vehicle.spec.length, vehicle.spec.width)


def resolve_intention(kind: IntentionKind, lane_id: str, road: RoadNetwork,
                      target_vehicle_id: int | None = None,
                      target_lane_id: str | None = None) -> DrivingIntention:
    """Fix the origin/target lanes of an intention at assignment time."""
    if target_lane_id is None:
        if kind is IntentionKind.CHANGE_LANE_LEFT:
            target_lane_id = road.left_of(lane_id)
            if target_lane_id is None:
                raise ScenarioError(f"ChangeLaneLeft from '{lane_id}': no left neighbor")
        elif kind is IntentionKind.CHANGE_LANE_RIGHT:
            target_lane_id = road.right_of(lane_id)
            if target_lane_id is None:
                raise ScenarioError(f"ChangeLaneRight from '{lane_id}': no right neighbor")
        elif kind is IntentionKind.MERGE_IN:
            zones = [z for z in road.zones_for(lane_id) if z.ramp_lane_id == lane_id]
            if not zones:
                raise ScenarioError(f"MergeIn from '{lane_id}': lane is not a ramp")
            target_lane_id = zones[0].main_lane_id
        elif kind is IntentionKind.DRIVE_OUT:
            candidates = [nb for nb in road.adjacency[lane_id] if nb in road.ramps]
            if not candidates:
                raise ScenarioError(f"DriveOut from '{lane_id}': no adjacent ramp")
            target_lane_id = candidates[0]
        else:
            target_lane_id = lane_id
    return DrivingIntention(kind=kind, target_vehicle_id=target_vehicle_id,
                            origin_lane_id=lane_id, target_lane_id=target_lane_id)


def intention_complete(vehicle: FlowVehicle, flow: FlowState, road: RoadNetwork) -> bool:
    """Whether the vehicle's driving intention holds in the current flow."""
    intent = vehicle.intention
    state = vehicle.state
    if intent.kind is IntentionKind.KEEP_LANE:
        return True
    if intent.kind in LANE_CHANGE_KINDS:
        target = intent.target_lane_id
        lane = road.lanes[target]
        return state.lane_id == target and abs(state.d) < 0.25 * lane.width
    # Overtake: back on the original lane, ahead of the target vehicle
    try:
        target_vehicle = flow.get(intent.target_vehicle_id)
    except KeyError:
        raise MissingTarget(
            f"overtake target {intent.target_vehicle_id} absent from flow") from None
    origin = intent.origin_lane_id
    lane = road.lanes[origin]
    on_origin = state.lane_id == origin and abs(state.d) < 0.25 * lane.width
    s_self = road.aligned_s(state.lane_id, state.s)
    s_target = road.aligned_s(target_vehicle.state.lane_id, target_vehicle.state.s)
    return on_origin and s_self > s_target + vehicle.spec.length


def validate_initial_flow(flow: FlowState, road: RoadNetwork):
    boxes = [(v.spec.id, vehicle_footprint(v, road)) for v in flow.vehicles]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if collide(boxes[i][1], boxes[j][1]):
                raise ScenarioError(
                    f"vehicles {boxes[i][0]} and {boxes[j][0]} overlap in the initial state")


_INTENTION_BY_NAME = {k.value: k for k in IntentionKind}


def _require(mapping, key, where, expected=None):
    if key not in mapping:
        raise ScenarioError(f"{where}: missing field '{key}'")
    value = mapping[key]
    if expected is not None and not isinstance(value, expected):
        raise ScenarioError(f"{where}.{key}: expected {expected.__name__}, "
                            f"got {type(value).__name__}")
    return value


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    lanes = []
    for i, entry in enumerate(_require(doc, "lanes", name, list)):
        where = f"lanes[{i}]"
        try:
            lanes.append(LaneGeometry(
                id=str(_require(entry, "id", where)),
                points=np.asarray(_require(entry, "points", where, list), dtype=float),
                width=float(_require(entry, "width", where)),
                speed_limit=float(_require(entry, "speed_limit", where)),
            ))
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}: {exc}") from None

    adjacency = {}
    for lid, entry in (doc.get("adjacency") or {}).items():
        entry = entry or {}
        adjacency[str(lid)] = (entry.get("left"), entry.get("right"))

    merge_zones = []
    for i, entry in enumerate(doc.get("merge_zones") or []):
        where = f"merge_zones[{i}]"
        extent = _require(entry, "extent", where, list)
        if len(extent) != 2:
            raise ScenarioError(f"{where}.extent: expected [start, end]")
        merge_zones.append(MergeZone(
            ramp_lane_id=str(_require(entry, "ramp", where)),
            main_lane_id=str(_require(entry, "main", where)),
            extent=(float(extent[0]), float(extent[1])),
            ramp_extent=float(entry.get("ramp_extent", 30.0)),
        ))

    road = RoadNetwork(
        lanes=lanes,
        adjacency=adjacency,
        ramps=[str(r) for r in doc.get("ramps") or []],
        merge_zones=merge_zones,
        connections={str(k): [str(x) for x in v]
                     for k, v in (doc.get("connections") or {}).items()},
    )

    vehicles = []
    for i, entry in enumerate(_require(doc, "vehicles", name, list)):
        where = f"vehicles[{i}]"
        lane_id = str(_require(entry, "lane", where))
        if lane_id not in road.lanes:
            raise ScenarioError(f"{where}.lane: unknown lane '{lane_id}'")
        spec = VehicleSpec(
            id=int(_require(entry, "id", where)),
            length=float(entry.get("length", 5.0)),
            width=float(entry.get("width", 2.0)),
            target_speed=float(_require(entry, "target_speed", where)),
            svo_angle=float(entry.get("svo", np.pi / 4)),
            weight_index=int(entry.get("weight_index", 0)),
            controlled=bool(entry.get("controlled", True)),
        )
        state = FrenetState(
            lane_id=lane_id,
            s=float(_require(entry, "s", where)),
            s_dot=float(_require(entry, "v", where)),
            d=float(entry.get("d", 0.0)),
        )
        lane = road.lanes[lane_id]
        if not 0.0 <= state.s <= lane.length:
            raise ScenarioError(f"{where}.s: {state.s} outside lane '{lane_id}' domain")
        intent_doc = entry.get("intention") or {"kind": "KeepLane"}
        kind_name = _require(intent_doc, "kind", f"{where}.intention")
        if kind_name not in _INTENTION_BY_NAME:
            raise ScenarioError(f"{where}.intention.kind: unknown kind '{kind_name}'")
        intention = resolve_intention(
            _INTENTION_BY_NAME[kind_name], lane_id, road,
            target_vehicle_id=intent_doc.get("target_vehicle"),
            target_lane_id=intent_doc.get("target_lane"),
        )
        state = replace(state, heading=road.lanes[lane_id].heading_at(state.s))
        vehicles.append(FlowVehicle(spec=spec, state=state, intention=intention))

    flow = FlowState(time=0.0, vehicles=tuple(vehicles))
    validate_initial_flow(flow, road)

    weight_set = [[float(x) for x in w] for w in doc.get("weights") or []]
    for i, w in enumerate(weight_set):
        if len(w) != 6:
            raise ScenarioError(f"weights[{i}]: expected 6 entries, got {len(w)}")

    intention_choices = {str(k): [str(x) for x in v]
                         for k, v in (doc.get("intention_choices") or {}).items()}
    return Scenario(name=str(doc.get("name", name)), road=road, flow=flow,
                    weight_set=weight_set, intention_choices=intention_choices)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: invalid YAML: {exc}") from None
    return scenario_from_dict(doc, name=path.stem)
