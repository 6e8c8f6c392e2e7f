"""Quintic-polynomial trajectory refinement in the Frenet frame.

Each decision-step action becomes one sub-trajectory segment: a grid of
end states is sampled around the action's nominal state change, every
candidate is connected by jerk-optimal quintics, infeasible or colliding
candidates are discarded and the cheapest survivor is chained onto the
next segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import LaneGeometry
from .mcts import Action
from .scenario import FrenetState, RoadNetwork, VehicleSpec


class DegenerateDuration(Exception):
    pass


class PlanningFailure(Exception):
    """Every candidate of a segment was rejected."""


@dataclass(frozen=True)
class CostWeights:
    w_cur: float = 1.0
    w_phi: float = 2.0
    w_out: float = 0.5
    w_acc: float = 0.2
    w_jerk: float = 0.05
    w_obs: float = 1.0
    w_vel: float = 0.1  # tracking of the vehicle's target speed

    def __post_init__(self):
        values = self.as_array()
        if np.any(values < 0) or not np.any(values > 0):
            raise ValueError("weights must be non-negative with at least one positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_cur, self.w_phi, self.w_out,
                         self.w_acc, self.w_jerk, self.w_obs, self.w_vel])


@dataclass(frozen=True)
class AlertZone:
    lon_margin: float = 10.0
    lat_margin: float = 2.0

    def __post_init__(self):
        if self.lon_margin <= 0 or self.lat_margin <= 0:
            raise ValueError("alert zone margins must be positive")


@dataclass(frozen=True)
class PlannerConfig:
    dt_plan: float = 0.1
    horizon: float = 12.0
    lon_offsets: tuple = (-2.0, -1.0, 0.0, 1.0, 2.0)
    speed_offsets: tuple = (-2.0, -1.0, 0.0, 1.0, 2.0)
    wide_speed_offsets: tuple = (-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0)
    brake_offsets: tuple = (-3.0, -4.0, -5.0)
    a_max: float = 4.0
    kappa_max: float = 0.2
    alert_zone: AlertZone = AlertZone()
    obs_eps: float = 0.01  # m^2, keeps the in-zone cost bounded near contact
    safety_margin: float = 0.5  # box inflation in the road frame, m
    emergency_decel: float = 4.0


@dataclass(frozen=True)
class QuinticPolynomial:
    coeffs: np.ndarray  # c0..c5
    duration: float

    def pos(self, t):
        c = self.coeffs
        return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))

    def vel(self, t):
        c = self.coeffs
        return c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])))

    def acc(self, t):
        c = self.coeffs
        return 2 * c[2] + t * (6 * c[3] + t * (12 * c[4] + t * 20 * c[5]))

    def jerk(self, t):
        c = self.coeffs
        return 6 * c[3] + t * (24 * c[4] + t * 60 * c[5])


def _boundary_matrix(T: float) -> np.ndarray:
    return np.array([
        [T ** 3, T ** 4, T ** 5],
        [3 * T ** 2, 4 * T ** 3, 5 * T ** 4],
        [6 * T, 12 * T ** 2, 20 * T ** 3],
    ])


def fit_quintic(start, end, T: float) -> QuinticPolynomial:
    """Unique quintic matching (pos, vel, acc) at both ends; the classical
    minimum-integrated-squared-jerk connection."""
    if T <= 0:
        raise DegenerateDuration(f"segment duration must be positive, got {T}")
    x0, v0, a0 = start
    x1, v1, a1 = end
    c012 = np.array([x0, v0, 0.5 * a0])
    b = np.array([
        x1 - (c012[0] + c012[1] * T + c012[2] * T * T),
        v1 - (c012[1] + 2 * c012[2] * T),
        a1 - 2 * c012[2],
    ])
    c345 = np.linalg.solve(_boundary_matrix(T), b)
    return QuinticPolynomial(np.concatenate([c012, c345]), T)


def _fit_many(x0, v0, a0, x1, v1, a1, T) -> np.ndarray:
    """Vectorized quintic fit over n candidates; returns (n, 6) coefficients."""
    n = len(np.atleast_1d(x1))
    x1 = np.broadcast_to(x1, (n,)).astype(float)
    v1 = np.broadcast_to(v1, (n,)).astype(float)
    a1 = np.broadcast_to(np.asarray(a1, dtype=float), (n,))
    c0 = np.full(n, x0)
    c1 = np.full(n, v0)
    c2 = np.full(n, 0.5 * a0)
    b = np.stack([
        x1 - (c0 + c1 * T + c2 * T * T),
        v1 - (c1 + 2 * c2 * T),
        a1 - 2 * c2,
    ])
    inv = np.linalg.inv(_boundary_matrix(T))
    c345 = inv @ b
    return np.column_stack([c0, c1, c2, c345.T])


def _eval_many(coeffs: np.ndarray, t: np.ndarray):
    """Sample positions/derivatives of many quintics on a shared grid.

    coeffs is (n, 6); returns four (n, len(t)) arrays.
    """
    powers = np.vander(t, 6, increasing=True)  # columns 1, t, ..., t^5
    pos = coeffs @ powers.T
    vel = (coeffs[:, 1:] * np.arange(1, 6)) @ powers[:, :5].T
    acc = (coeffs[:, 2:] * (np.arange(2, 6) * np.arange(1, 5))) @ powers[:, :4].T
    jerk = (coeffs[:, 3:] * (np.arange(3, 6) * np.arange(2, 5)
                             * np.arange(1, 4))) @ powers[:, :3].T
    return pos, vel, acc, jerk


@dataclass
class SampledPath:
    """Time-gridded trajectory samples in both road-frame and lane-frame
    coordinates, shared by planned and predicted vehicles."""
    t0: float
    dt: float
    lane: list[str]
    s: np.ndarray
    d: np.ndarray
    v_s: np.ndarray
    v_d: np.ndarray
    a_s: np.ndarray
    a_d: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray

    def __len__(self):
        return len(self.s)

    def index_at(self, t: float) -> int:
        idx = int(round((t - self.t0) / self.dt))
        return min(max(idx, 0), len(self.s) - 1)

    def covers(self, t: float) -> bool:
        return t <= self.t0 + (len(self.s) - 1) * self.dt + 1e-9

    def state_at(self, t: float) -> FrenetState:
        i = self.index_at(t)
        return FrenetState(
            lane_id=self.lane[i], s=float(self.s[i]), s_dot=float(self.v_s[i]),
            d=float(self.d[i]), d_dot=float(self.v_d[i]),
            s_ddot=float(self.a_s[i]), d_ddot=float(self.a_d[i]),
            heading=float(self.heading[i]))


def lane_xy(lane: LaneGeometry, s, d):
    """Cartesian points for arrays of (s, d), extrapolating linearly past
    the reference-line ends."""
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    sc = np.clip(s, 0.0, lane.length)
    x = np.interp(sc, lane.cum_s, lane.points[:, 0])
    y = np.interp(sc, lane.cum_s, lane.points[:, 1])
    idx = np.clip(np.searchsorted(lane.cum_s, sc, side="right") - 1,
                  0, len(lane.headings) - 1)
    h = lane.headings[idx]
    over = s - sc  # positive beyond the end, negative before the start
    x = x + over * np.cos(h)
    y = y + over * np.sin(h)
    return x - d * np.sin(h), y + d * np.cos(h), h


class _Frames:
    """Road-frame bookkeeping shared by the planner and predictions."""

    def __init__(self, road: RoadNetwork):
        self.road = road

    def lon0(self, lane_id):
        return self.road.aligned_s(lane_id, 0.0)

    def lat0(self, lane_id):
        return self.road.lateral_offset(lane_id)

    def materialize(self, lon: float, lat: float, lane_id: str):
        """Assign (lon, lat) to the best-fitting lane near lane_id."""
        road = self.road
        s = lon - self.lon0(lane_id)
        lane = road.lanes[lane_id]
        if s > lane.length and road.connections.get(lane_id):
            lane_id = min(road.connections[lane_id],
                          key=lambda l: abs(lat - self.lat0(l)))
        for _ in range(4):
            d = lat - self.lat0(lane_id)
            w = road.lanes[lane_id].width
            left, right = road.adjacency[lane_id]
            if d > 0.5 * w + 1e-9 and left:
                lane_id = left
            elif d < -0.5 * w - 1e-9 and right:
                lane_id = right
            else:
                break
        return lane_id, lon - self.lon0(lane_id), lat - self.lat0(lane_id)


def build_sampled_path(road, lane_id, t0, dt, s, d, v_s, v_d, a_s, a_d,
                       lane_ids=None) -> SampledPath:
    """Materialize lane-frame sample arrays into a SampledPath with
    road-frame and Cartesian coordinates."""
    frames = _Frames(road)
    n = len(s)
    lon = road.aligned_s(lane_id, 0.0) + np.asarray(s, dtype=float)
    lat = road.lateral_offset(lane_id) + np.asarray(d, dtype=float)
    lanes_out, s_out, d_out = [], np.empty(n), np.empty(n)
    cur = lane_id
    for i in range(n):
        cur, si, di = frames.materialize(float(lon[i]), float(lat[i]), cur)
        lanes_out.append(cur)
        s_out[i] = si
        d_out[i] = di
    x = np.empty(n)
    y = np.empty(n)
    heading = np.empty(n)
    i = 0
    while i < n:  # convert contiguous same-lane runs at once
        j = i
        while j < n and lanes_out[j] == lanes_out[i]:
            j += 1
        lane = road.lanes[lanes_out[i]]
        xi, yi, hi = lane_xy(lane, s_out[i:j], d_out[i:j])
        x[i:j], y[i:j] = xi, yi
        heading[i:j] = hi + np.arctan2(v_d[i:j], np.maximum(v_s[i:j], 0.5))
        i = j
    return SampledPath(t0=t0, dt=dt, lane=lanes_out, s=s_out, d=d_out,
                       v_s=np.asarray(v_s, float), v_d=np.asarray(v_d, float),
                       a_s=np.asarray(a_s, float), a_d=np.asarray(a_d, float),
                       lon=lon, lat=lat, x=x, y=y, heading=heading)


def predict_uncontrolled(spec: VehicleSpec, state: FrenetState, road: RoadNetwork,
                         horizon: float, dt: float, t0: float = 0.0,
                         converge_time: float = 3.0) -> SampledPath:
    """Lane-keeping rollout: constant speed, lateral offset decaying to the
    lane center."""
    n = int(round(horizon / dt)) + 1
    t = np.arange(n) * dt
    s = state.s + state.s_dot * t
    decay = np.maximum(1.0 - t / converge_time, 0.0)
    d = state.d * decay
    v_d = np.gradient(d, dt) if n > 1 else np.zeros(1)
    return build_sampled_path(road, state.lane_id, t0, dt, s, d,
                              np.full(n, state.s_dot), v_d,
                              np.zeros(n), np.zeros(n))


def predict_committed(spec: VehicleSpec, state: FrenetState, actions,
                      road: RoadNetwork, cfg: PlannerConfig,
                      dt_decision: float, t0: float = 0.0,
                      first_T: float | None = None) -> SampledPath:
    """Nominal rollout of a committed action sequence: piecewise-constant
    longitudinal acceleration (floored at standstill) and minimum-jerk
    lateral moves, padded with lane keeping to the horizon.  first_T, when
    given, is the time left in the current decision step, shortening the
    first segment so the rollout stays boundary-aligned."""
    if first_T is None:
        first_T = dt_decision
    n0 = max(int(round(first_T / cfg.dt_plan)), 1)
    first_T = n0 * cfg.dt_plan
    n_steps = int(round(dt_decision / cfg.dt_plan))
    n_segments = int(math.ceil((cfg.horizon - first_T) / dt_decision)) + 1
    seq = list(actions)[:n_segments]
    seq += [Action("KS", 0.0)] * (n_segments - len(seq))
    frames = _Frames(road)
    start = _SegmentStart(state.lane_id, state.s, state.s_dot, 0.0,
                          state.d, state.d_dot, 0.0)
    s_parts = [np.array([state.s])]
    d_parts = [np.array([state.d])]
    vs_parts = [np.array([state.s_dot])]
    vd_parts = [np.array([state.d_dot])]
    as_parts = [np.array([0.0])]
    ad_parts = [np.array([0.0])]
    lanes = [state.lane_id]
    for k, action in enumerate(seq):
        T = first_T if k == 0 else dt_decision
        t_local = np.arange(1, (n0 if k == 0 else n_steps) + 1) * cfg.dt_plan
        a = action.accel
        if a < 0 and start.v + a * T < 0:
            t_stop = start.v / -a
            moving = t_local < t_stop
            s = np.where(moving, start.s + start.v * t_local + 0.5 * a * t_local ** 2,
                         start.s + 0.5 * start.v * t_stop)
            v = np.maximum(start.v + a * t_local, 0.0)
            acc = np.where(moving, a, 0.0)
        else:
            s = start.s + start.v * t_local + 0.5 * a * t_local ** 2
            v = start.v + a * t_local
            acc = np.full(len(t_local), a)
        d_end, vd_end = _lateral_target(start, action, road, dt_decision)
        poly = fit_quintic((start.d, start.v_d, start.a_d),
                           (d_end, vd_end, 0.0), T)
        d = poly.pos(t_local)
        vd = poly.vel(t_local)
        ad = poly.acc(t_local)
        s_parts.append(s); d_parts.append(d)
        vs_parts.append(v); vd_parts.append(vd)
        as_parts.append(acc); ad_parts.append(ad)
        lanes.append(start.lane_id)
        lon_end = road.aligned_s(start.lane_id, 0.0) + float(s[-1])
        lat_end = road.lateral_offset(start.lane_id) + float(d[-1])
        nl, ns, nd = frames.materialize(lon_end, lat_end, start.lane_id)
        start = _SegmentStart(nl, ns, float(v[-1]), 0.0, nd,
                              float(vd[-1]), float(ad[-1]))
    ref = lanes[0]
    lon_all = np.concatenate([road.aligned_s(l, 0.0) + np.asarray(p)
                              for l, p in zip(lanes, s_parts)])
    lat_all = np.concatenate([road.lateral_offset(l) + np.asarray(p)
                              for l, p in zip(lanes, d_parts)])
    return build_sampled_path(
        road, ref, t0, cfg.dt_plan,
        lon_all - road.aligned_s(ref, 0.0),
        lat_all - road.lateral_offset(ref),
        np.concatenate(vs_parts), np.concatenate(vd_parts),
        np.concatenate(as_parts), np.concatenate(ad_parts))


def sample_target_states(action: Action, v0: float, lane_width: float,
                         cfg: PlannerConfig, dt_decision: float,
                         widen: bool = False):
    """End-state grid for one action segment: (ds, v_end) pairs plus the
    action's fixed lateral displacement."""
    dv = action.accel * dt_decision
    if v0 + dv < 0:
        ds_nom = v0 * v0 / (2 * abs(action.accel)) if action.accel < 0 else 0.0
        v_nom = 0.0
    else:
        ds_nom = v0 * dt_decision + 0.5 * dv * dt_decision
        v_nom = v0 + dv
    speed_offsets = cfg.wide_speed_offsets if (widen and action.lat_sign == 0) \
        else cfg.speed_offsets
    ds = ds_nom + np.asarray(cfg.lon_offsets)
    v_end = np.maximum(v_nom + np.asarray(speed_offsets), 0.0)
    ds_grid, v_grid = [a.ravel() for a in np.meshgrid(ds, v_end)]
    # escape hatch beyond the nominal grid: hard-braking candidates with the
    # end position pulled back to match the lost speed
    for dv in cfg.brake_offsets:
        vb = max(v_nom + dv, 0.0)
        ds_b = max(ds_nom + 0.5 * (vb - v_nom) * dt_decision, 0.05)
        ds_grid = np.append(ds_grid, ds_b)
        v_grid = np.append(v_grid, vb)
    keep = ds_grid > 1e-6  # no reversing targets
    if not np.any(keep):
        ds_grid, v_grid = np.array([max(ds_nom, 0.05)]), np.array([0.0])
    else:
        ds_grid, v_grid = ds_grid[keep], v_grid[keep]
    lat_mag = action.lat_mag if action.lat_mag is not None else 0.5 * lane_width
    dd = action.lat_sign * lat_mag
    return ds_grid, v_grid, dd


def obstacle_cost_point(d_lon: float, d_lat: float, half_l: float, half_w: float,
                        zone: AlertZone, eps: float = 0.01):
    """Three-zone obstacle cost for one (ego sample, other vehicle) pair in
    the road frame; returns None on footprint overlap."""
    ax, ay = abs(d_lon), abs(d_lat)
    if ax <= half_l and ay <= half_w:
        return None  # collision
    if ax > half_l + zone.lon_margin or ay > half_w + zone.lat_margin:
        return 0.0
    clearance = math.hypot(max(ax - half_l, 0.0), max(ay - half_w, 0.0))
    return 1.0 / (clearance * clearance + eps)


def total_cost(terms, weights: CostWeights) -> float:
    return float(np.dot(np.asarray(terms, dtype=float), weights.as_array()))


@dataclass
class _SegmentStart:
    lane_id: str
    s: float
    v: float
    a: float
    d: float
    v_d: float
    a_d: float


def _lateral_delta(start: _SegmentStart, action: Action, road) -> float:
    """Remaining lateral displacement implied by an action."""
    if action.lat_sign == 0 or (action.lat_mag is None and action.lat_sign != 0
                                and _neighbor(road, start.lane_id, action.lat_sign) is None):
        return -start.d  # settle on the current lane's centerline
    if action.lat_mag is None and start.d * action.lat_sign < -0.3:
        # already crossed onto the target lane: finish the change by
        # settling on this lane's centerline
        return -start.d
    if action.lat_mag is None:
        nb = _neighbor(road, start.lane_id, action.lat_sign)
        return (road.lateral_offset(nb) - road.lateral_offset(start.lane_id)
                - start.d)
    return action.lat_sign * action.lat_mag


def _lane_change_width(start: _SegmentStart, action: Action, road):
    """Full centerline-to-centerline offset of the commanded change, or
    None when the action reduces to settling on a centerline."""
    if action.lat_sign == 0 or action.lat_mag is not None:
        return None
    if _neighbor(road, start.lane_id, action.lat_sign) is None:
        return None
    if start.d * action.lat_sign < -0.3:
        return None  # already crossed; settle on this lane's centerline
    nb = _neighbor(road, start.lane_id, action.lat_sign)
    return road.lateral_offset(nb) - road.lateral_offset(start.lane_id)


def _lateral_targets(start: _SegmentStart, action: Action, road,
                     dt_decision: float):
    """Candidate lateral boundary states (d_end, v_end) for one segment.

    Boundary states are anchored to the lane geometry, not the vehicle's
    current offset, so a mid-step replan continues the profile it was
    already tracing.  A full lane change is offered both directly (reach
    the neighbor centerline by the segment end) and split across two
    segments via the fixed minimum-jerk midpoint between the centerlines;
    the feasibility filter keeps whichever the current state supports.
    """
    width = _lane_change_width(start, action, road)
    if width is None:
        delta = _lateral_delta(start, action, road)
        options = [(start.d + delta, 0.0)]
        if abs(delta) > 1.0:
            # a large correction in one step may exceed the acceleration
            # envelope (e.g. settling from a stalled half-finished change);
            # offer a two-step split as well
            options.append((start.d + 0.51 * delta,
                            1.875 * delta / (2.0 * dt_decision)))
        return options
    options = [(width, 0.0)]
    if abs(width - start.d) > 1.2:
        # nudge the midpoint just across the lane edge so the end state
        # rebases onto the target lane and a plain in-lane follow-up
        # completes the change instead of settling back
        mid = (0.5 + 0.02) * width
        options.append((mid, 1.875 * width / (2.0 * dt_decision)))
    return options


def _lateral_target(start: _SegmentStart, action: Action, road,
                    dt_decision: float):
    """Single nominal lateral boundary state, used for rollout prediction."""
    width = _lane_change_width(start, action, road)
    if width is None:
        return start.d + _lateral_delta(start, action, road), 0.0
    v_mid = 1.875 * width / (2.0 * dt_decision)
    if (abs(width - start.d) <= 0.5 * abs(width)
            or start.v_d * np.sign(width) > 0.6 * abs(v_mid)):
        return width, 0.0
    return (0.5 + 0.02) * width, v_mid


def _neighbor(road, lane_id, lat_sign):
    left, right = road.adjacency[lane_id]
    return left if lat_sign > 0 else right


def _segment_candidates(start: _SegmentStart, action: Action, road, cfg,
                        dt_decision, widen, seg_T=None):
    """Candidate (lon, lat) quintic pairs for one segment of duration seg_T
    (the first segment of a mid-step replan is shorter than dt_decision)."""
    T = dt_decision if seg_T is None else seg_T
    lane = road.lanes[start.lane_id]
    ds_grid, v_grid, _ = sample_target_states(action, start.v, lane.width,
                                               cfg, T, widen)
    lon_one = _fit_many(start.s, start.v, start.a,
                        start.s + ds_grid, v_grid, 0.0, T)
    targets = _lateral_targets(start, action, road, dt_decision)
    lon_coeffs = np.concatenate([lon_one] * len(targets))
    lat_coeffs = np.concatenate([
        _fit_many(start.d, start.v_d, start.a_d,
                  np.full(len(ds_grid), d_end), vd_end, 0.0, T)
        for d_end, vd_end in targets])
    return lon_coeffs, lat_coeffs


def _road_curvature(road, lane_id, s_arr):
    lane = road.lanes[lane_id]
    return np.array([lane.curvature_at(min(max(float(s), 0.0), lane.length))
                     for s in s_arr])


class _SegmentFrame:
    """Evaluated candidate set for one segment during the chaining search."""

    __slots__ = ("lane_id", "order", "ptr", "arrays", "lon", "lat")

    def __init__(self, lane_id, order, arrays, lon, lat):
        self.lane_id = lane_id
        self.order = order  # candidate indices, cheapest first
        self.ptr = 0
        self.arrays = arrays  # (s_p, s_v, s_a, d_p, d_v, d_a)
        self.lon = lon
        self.lat = lat

    def pick(self):
        return self.order[self.ptr - 1] if self.ptr > 0 else None


def _evaluate_segment(spec, start, action, predictions, weights,
                      road, cfg, dt_decision, t_start, t_local, widen,
                      seg_T=None):
    lane_id = start.lane_id
    lon_c, lat_c = _segment_candidates(start, action, road, cfg,
                                       dt_decision, widen, seg_T=seg_T)
    s_p, s_v, s_a, s_j = _eval_many(lon_c, t_local)
    d_p, d_v, d_a, d_j = _eval_many(lat_c, t_local)

    speed_ok = np.all(s_v >= -1e-6, axis=1)
    acc_mag = np.hypot(s_a, d_a)
    acc_ok = np.all(acc_mag <= cfg.a_max + 1e-9, axis=1)
    vel2 = np.maximum(s_v ** 2 + d_v ** 2, 1e-3)
    path_kappa = (s_v * d_a - d_v * s_a) / vel2 ** 1.5
    kappa_road = _road_curvature(road, lane_id, s_p.mean(axis=0))
    kappa = path_kappa + kappa_road[None, :]
    # path curvature is ill-defined (and harmless) near standstill
    kappa_ok = np.all((np.abs(kappa) <= cfg.kappa_max + 1e-9)
                      | (vel2 <= 1.0), axis=1)
    feasible = speed_ok & acc_ok & kappa_ok

    # road-frame coordinates of every candidate sample
    lon = road.aligned_s(lane_id, 0.0) + s_p
    lat = road.lateral_offset(lane_id) + d_p

    t_abs = t_start + t_local
    j_obs = np.zeros(lon.shape[0])
    collided = np.zeros(lon.shape[0], dtype=bool)
    zone = cfg.alert_zone
    for ospec, opath in predictions:
        if not opath.covers(t_abs[0]):
            continue
        idx = np.clip(np.round((t_abs - opath.t0) / opath.dt).astype(int),
                      0, len(opath) - 1)
        d_lon = np.abs(lon - opath.lon[idx][None, :])
        d_lat = np.abs(lat - opath.lat[idx][None, :])
        half_l = 0.5 * (spec.length + ospec.length) + cfg.safety_margin
        half_w = 0.5 * (spec.width + ospec.width) + cfg.safety_margin
        hit = (d_lon <= half_l) & (d_lat <= half_w)
        any_hit = np.any(hit, axis=1)
        if ospec.controlled and np.any(any_hit):
            # a conflict that begins with the other vehicle approaching
            # from behind is that vehicle's responsibility: it replans
            # after us, against our actual trajectory
            first = np.argmax(hit, axis=1)
            rear_onset = (lon[np.arange(len(first)), first]
                          > opath.lon[idx[first]])
            collided |= any_hit & ~rear_onset
        else:
            collided |= any_hit
        in_zone = (d_lon <= half_l + zone.lon_margin) & \
                  (d_lat <= half_w + zone.lat_margin) & ~hit
        if np.any(in_zone):
            cx = np.maximum(d_lon - half_l, 0.0)
            cy = np.maximum(d_lat - half_w, 0.0)
            clear2 = cx * cx + cy * cy
            j_obs += np.sum(np.where(in_zone, 1.0 / (clear2 + cfg.obs_eps), 0.0),
                            axis=1)
    feasible &= ~collided

    lane_change = action.lat_sign != 0
    j_cur = np.sum(kappa ** 2, axis=1)
    rel_heading = np.arctan2(d_v, np.maximum(s_v, 0.5))
    j_phi = np.sum(rel_heading ** 2, axis=1)
    j_out = np.zeros(lon.shape[0]) if lane_change else np.sum(d_p ** 2, axis=1)
    j_acc = np.sum(acc_mag ** 2, axis=1)
    j_jerk = np.sum(s_j ** 2 + d_j ** 2, axis=1)
    if action.accel == 0.0:
        v_ref = min(spec.target_speed, road.lanes[lane_id].speed_limit)
    else:  # speed commands track the action's nominal end speed
        T = dt_decision if seg_T is None else seg_T
        v_ref = max(start.v + action.accel * T, 0.0)
    j_vel = np.sum((s_v - v_ref) ** 2, axis=1)
    costs = (weights.w_cur * j_cur + weights.w_phi * j_phi
             + weights.w_out * j_out + weights.w_acc * j_acc
             + weights.w_jerk * j_jerk + weights.w_obs * j_obs
             + weights.w_vel * j_vel)
    order = [int(i) for i in np.argsort(costs) if feasible[i]]
    return _SegmentFrame(lane_id, order, (s_p, s_v, s_a, d_p, d_v, d_a),
                         lon, lat)


def plan_vehicle(spec: VehicleSpec, state: FrenetState, actions,
                 predictions, weights: CostWeights, road: RoadNetwork,
                 cfg: PlannerConfig, dt_decision: float, t0: float = 0.0,
                 widen: bool = False, max_expansions: int = 160,
                 first_T: float | None = None) -> tuple[SampledPath, bool]:
    """Refine an action sequence into a sampled trajectory.

    predictions: list of (VehicleSpec, SampledPath) for every other vehicle,
    time-aligned with t0. Segments end on decision-step boundaries: when a
    replan starts mid-step, first_T gives the time left in the current step
    so the first segment is correspondingly shorter and the lateral profile
    continues rather than restarting. Segments are chained cheapest-first
    with backtracking: a segment whose candidates are all infeasible sends
    the search back to the previous segment's next-best candidate. Returns
    (path, fallback_used); if no full chain exists within the expansion
    budget the remainder after the deepest feasible prefix is an in-lane
    maximum-deceleration profile.
    """
    if first_T is None:
        first_T = dt_decision
    n0 = max(int(round(first_T / cfg.dt_plan)), 1)
    first_T = n0 * cfg.dt_plan
    n_steps = int(round(dt_decision / cfg.dt_plan))
    n_segments = max(
        int(math.ceil((cfg.horizon - first_T) / dt_decision)) + 1,
        len(actions))
    ks = Action("KS", 0.0)
    seq = list(actions) + [ks] * (n_segments - len(actions))

    start0 = _SegmentStart(state.lane_id, state.s, state.s_dot, state.s_ddot,
                           state.d, state.d_dot, state.d_ddot)
    frames = _Frames(road)

    def seg_duration(k):
        return first_T if k == 0 else dt_decision

    def seg_t_start(k):
        return t0 + (first_T + (k - 1) * dt_decision if k else 0.0)

    t_local_full = np.arange(1, n_steps + 1) * cfg.dt_plan  # excl. seg start
    t_local_first = np.arange(1, n0 + 1) * cfg.dt_plan

    starts = [start0]
    stack: list[_SegmentFrame] = []
    expansions = 0
    seg = 0
    while seg < n_segments:
        if len(stack) == seg:
            stack.append(_evaluate_segment(
                spec, starts[seg], seq[seg], predictions, weights,
                road, cfg, dt_decision, seg_t_start(seg),
                t_local_first if seg == 0 else t_local_full, widen,
                seg_T=seg_duration(seg)))
            expansions += 1
        frame = stack[seg]
        if frame.ptr >= len(frame.order) or expansions > max_expansions:
            if seg == 0 or expansions > max_expansions:
                break  # emergency tail from the deepest viable prefix
            stack.pop()
            starts.pop()
            seg -= 1
            continue
        cand = frame.order[frame.ptr]
        frame.ptr += 1
        s_p, s_v, s_a, d_p, d_v, d_a = frame.arrays
        new_lane, new_s, new_d = frames.materialize(
            float(frame.lon[cand, -1]), float(frame.lat[cand, -1]),
            frame.lane_id)
        starts.append(_SegmentStart(new_lane, new_s, float(s_v[cand, -1]),
                                    float(s_a[cand, -1]), new_d,
                                    float(d_v[cand, -1]), float(d_a[cand, -1])))
        seg += 1

    # keep the frames that hold a committed pick
    chosen = [f for f in stack[:seg] if f.pick() is not None]
    truncated = len(chosen) < n_segments
    # a braked tail past the committed actions is an acceptable plan; only
    # failing to realize the actions themselves warrants a re-decision
    fallback = len(chosen) < max(len(actions), 1)

    all_s = [np.array([state.s])]
    all_d = [np.array([state.d])]
    all_vs = [np.array([state.s_dot])]
    all_vd = [np.array([state.d_dot])]
    all_as = [np.array([state.s_ddot])]
    all_ad = [np.array([state.d_ddot])]
    lane_for_chunk = [state.lane_id]
    for frame in chosen:
        k = frame.pick()
        s_p, s_v, s_a, d_p, d_v, d_a = frame.arrays
        all_s.append(s_p[k]); all_d.append(d_p[k])
        all_vs.append(s_v[k]); all_vd.append(d_v[k])
        all_as.append(s_a[k]); all_ad.append(d_a[k])
        lane_for_chunk.append(frame.lane_id)
    if truncated:
        tail_start = starts[len(chosen)]
        elapsed = (first_T + (len(chosen) - 1) * dt_decision
                   if chosen else 0.0)
        remaining = cfg.horizon - elapsed
        tail = _emergency_tail(tail_start, cfg, remaining)
        all_s.append(tail[0]); all_d.append(tail[1])
        all_vs.append(tail[2]); all_vd.append(tail[3])
        all_as.append(tail[4]); all_ad.append(tail[5])
        lane_for_chunk.append(tail_start.lane_id)

    # stitch chunks into one lane-frame array (each chunk in its own lane
    # frame; convert via the shared road frame)
    ref_lane = lane_for_chunk[0]
    lon_parts, lat_parts = [], []
    for chunk_lane, s_arr, d_arr in zip(lane_for_chunk, all_s, all_d):
        lon_parts.append(road.aligned_s(chunk_lane, 0.0) + np.asarray(s_arr))
        lat_parts.append(road.lateral_offset(chunk_lane) + np.asarray(d_arr))
    lon_all = np.concatenate(lon_parts)
    lat_all = np.concatenate(lat_parts)
    s_all = lon_all - road.aligned_s(ref_lane, 0.0)
    d_all = lat_all - road.lateral_offset(ref_lane)
    path = build_sampled_path(
        road, ref_lane, t0, cfg.dt_plan, s_all, d_all,
        np.concatenate(all_vs), np.concatenate(all_vd),
        np.concatenate(all_as), np.concatenate(all_ad))
    return path, fallback


def _emergency_tail(start: _SegmentStart, cfg: PlannerConfig, remaining: float):
    """Maximum-deceleration in-lane profile used when a segment has no
    feasible candidate."""
    n = max(int(round(remaining / cfg.dt_plan)), 1)
    t = np.arange(1, n + 1) * cfg.dt_plan
    a = cfg.emergency_decel
    t_stop = start.v / a if a > 0 else np.inf
    moving = t < t_stop
    s = np.where(moving, start.s + start.v * t - 0.5 * a * t * t,
                 start.s + 0.5 * start.v * t_stop if np.isfinite(t_stop) else start.s)
    v = np.maximum(start.v - a * t, 0.0)
    acc = np.where(moving, -a, 0.0)
    d = np.full(n, start.d)
    zeros = np.zeros(n)
    return s, d, v, zeros, acc, zeros
