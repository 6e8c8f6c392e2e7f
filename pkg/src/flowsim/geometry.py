"""Lane geometry, Frenet-frame conversions and rectangle collision tests.

Lateral offsets d are signed left-positive relative to the direction of
travel along the reference line. Reference lines are polylines with
linear interpolation; arc length is precomputed per lane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NoProjection(Exception):
    """Point cannot be projected onto the lane reference line."""


class OutOfDomain(Exception):
    """Arc length outside the lane's domain."""


@dataclass(frozen=True)
class LaneGeometry:
    id: str
    points: np.ndarray  # (N, 2) reference-line polyline, metres
    width: float
    speed_limit: float
    # derived, filled in __post_init__
    cum_s: np.ndarray = field(default=None, repr=False)
    headings: np.ndarray = field(default=None, repr=False)  # per segment

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError(f"lane {self.id}: reference line needs >= 2 2-D points")
        if self.width <= 0:
            raise ValueError(f"lane {self.id}: width must be > 0")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0):
            raise ValueError(f"lane {self.id}: arc length must be strictly increasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cum_s", np.concatenate([[0.0], np.cumsum(seg_len)]))
        object.__setattr__(self, "headings", np.arctan2(seg[:, 1], seg[:, 0]))

    @property
    def length(self) -> float:
        return float(self.cum_s[-1])

    def _segment_index(self, s: float) -> int:
        idx = int(np.searchsorted(self.cum_s, s, side="right")) - 1
        return min(max(idx, 0), len(self.headings) - 1)

    def point_at(self, s: float) -> np.ndarray:
        i = self._segment_index(s)
        t = s - self.cum_s[i]
        seg = self.points[i + 1] - self.points[i]
        seg_len = self.cum_s[i + 1] - self.cum_s[i]
        return self.points[i] + seg * (t / seg_len)

    def heading_at(self, s) -> float:
        return float(self.headings[self._segment_index(float(s))])

    def normal_at(self, s: float) -> np.ndarray:
        h = self.heading_at(s)
        return np.array([-np.sin(h), np.cos(h)])  # left of travel direction

    def curvature_at(self, s: float) -> float:
        """Signed curvature from finite differences of segment headings."""
        n = len(self.headings)
        if n < 2:
            return 0.0
        i = self._segment_index(s)
        j = min(i + 1, n - 1)
        i = j - 1
        dh = np.arctan2(np.sin(self.headings[j] - self.headings[i]),
                        np.cos(self.headings[j] - self.headings[i]))
        ds = 0.5 * (self.cum_s[j + 1] - self.cum_s[i])
        return float(dh / ds) if ds > 0 else 0.0


def to_frenet(position, lane: LaneGeometry) -> tuple[float, float, float]:
    """Project a 2-D point onto the lane; returns (s, d, lane heading at s).

    d is left-positive. Raises NoProjection beyond the lane endpoints or
    farther than twice the lane width laterally.
    """
    p = np.asarray(position, dtype=float)
    pts = lane.points
    a = pts[:-1]
    seg = pts[1:] - a
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    rel = p - a
    u = np.einsum("ij,ij->i", rel, seg) / seg_len2  # unclamped segment params
    uc = np.clip(u, 0.0, 1.0)
    feet = a + seg * uc[:, None]
    d2 = np.einsum("ij,ij->i", p - feet, p - feet)
    k = int(np.argmin(d2))

    seg_len = np.sqrt(seg_len2[k])
    eps = 1e-9
    if (k == 0 and u[0] < -eps / seg_len) or \
       (k == len(u) - 1 and u[-1] > 1.0 + eps / seg_len):
        raise NoProjection(f"point {p.tolist()} beyond lane {lane.id} endpoints")

    s = float(lane.cum_s[k] + uc[k] * seg_len)
    normal = np.array([-seg[k, 1], seg[k, 0]]) / seg_len
    d = float(np.dot(p - feet[k], normal))
    if abs(d) >= 2.0 * lane.width:
        raise NoProjection(
            f"point {p.tolist()} is {abs(d):.2f} m from lane {lane.id} centerline")
    return s, d, float(lane.headings[k])


def from_frenet(s: float, d: float, lane: LaneGeometry) -> tuple[np.ndarray, float]:
    """Inverse of to_frenet: returns (Cartesian point, lane heading at s)."""
    if s < -1e-9 or s > lane.length + 1e-9:
        raise OutOfDomain(f"s={s:.3f} outside lane {lane.id} domain [0, {lane.length:.3f}]")
    s = min(max(s, 0.0), lane.length)
    p = lane.point_at(s) + d * lane.normal_at(s)
    return p, lane.heading_at(s)


def footprint(x: float, y: float, theta: float, length: float, width: float) -> np.ndarray:
    """Oriented rectangle corners (4, 2) centered at (x, y), aligned with theta."""
    c, s = np.cos(theta), np.sin(theta)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def collide(a: np.ndarray, b: np.ndarray) -> bool:
    """Closed-set rectangle intersection via the separating-axis test.

    Touching counts as a collision.
    """
    for rect in (a, b):
        for i in range(2):  # two unique edge normals per rectangle
            edge = rect[(i + 1) % 4] - rect[i]
            axis = np.array([-edge[1], edge[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def circumradius(length: float, width: float) -> float:
    return 0.5 * float(np.hypot(length, width))
