"""Spline control space: trajectory generation, safety checks, penalties.

A control input is (kappa_start, kappa_end, arc_length). Curvature varies
linearly along arc length between the two knots, giving a quadratic heading
profile; positions are integrated at fixed arc-length steps.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2D, wrap_angle
from .grid import OccupancyGrid, SafetyMasks, frontiers, safety_masks

CAUSE_CURVATURE = "curvature"
CAUSE_OCCUPANCY = "occupancy"
CAUSE_UNKNOWN = "unknown-region"
CAUSE_OOB = "out-of-bounds"


@dataclass(frozen=True)
class ControlInput:
    """Spline parameters: curvature at both knots (1/m) and arc length (m)."""

    kappa_start: float
    kappa_end: float
    arc_length: float

    def __post_init__(self):
        if self.arc_length <= 0:
            raise ValueError("arc_length must be positive")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.kappa_start, self.kappa_end, self.arc_length])

    @staticmethod
    def from_params(p) -> "ControlInput":
        return ControlInput(float(p[0]), float(p[1]), float(p[2]))


@dataclass(frozen=True)
class ControlBounds:
    """Box bounds of the control space plus the preferred path length."""

    kappa_box: float = 1.3
    length_min: float = 1.0
    length_max: float = 8.0
    length_ref: float = 5.0

    def __post_init__(self):
        if not 0 < self.length_min < self.length_max:
            raise ValueError("need 0 < length_min < length_max")
        if not self.length_min <= self.length_ref <= self.length_max:
            raise ValueError("length_ref must lie within the length bounds")

    def lower(self) -> np.ndarray:
        return np.array([-self.kappa_box, -self.kappa_box, self.length_min])

    def upper(self) -> np.ndarray:
        return np.array([self.kappa_box, self.kappa_box, self.length_max])

    def contains(self, u: ControlInput) -> bool:
        p = u.params
        return bool(np.all(p >= self.lower() - 1e-9) and np.all(p <= self.upper() + 1e-9))

    def clip(self, params) -> np.ndarray:
        return np.clip(params, self.lower(), self.upper())


@dataclass(frozen=True)
class Trajectory:
    """Pose sequence at fixed arc-length spacing `ds`, row k at s = k*ds."""

    poses: np.ndarray          # (M+1, 3): x, y, heading
    control: ControlInput      # None for paths not generated from a spline
    ds: float

    @property
    def start_pose(self) -> Pose2D:
        return Pose2D(*self.poses[0])

    @property
    def end_pose(self) -> Pose2D:
        return Pose2D(*self.poses[-1])

    @property
    def arc_lengths(self) -> np.ndarray:
        return np.arange(self.poses.shape[0]) * self.ds

    @property
    def length(self) -> float:
        return (self.poses.shape[0] - 1) * self.ds


# 3-point Gauss-Legendre nodes/weights on [0, 1]
_GL_NODES = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0])
_GL_W = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


def spline_trajectory(u: ControlInput, start: Pose2D, ds: float) -> Trajectory:
    """Integrate the linear-curvature spline from `start` at step `ds`.

    Heading is quadratic in arc length; per-step positions use 3-point
    Gauss-Legendre quadrature, so circular arcs are exact to ~1e-12.
    """
    if ds <= 0:
        raise ValueError("ds must be positive")
    L = u.arc_length
    m = max(1, int(np.ceil(L / ds - 1e-9)))
    h = L / m

    k0, k1 = u.kappa_start, u.kappa_end
    heading = lambda s: start.heading + k0 * s + (k1 - k0) * s * s / (2.0 * L)

    s0 = np.arange(m) * h
    nodes = s0[:, None] + h * _GL_NODES[None, :]
    th = heading(nodes)
    dx = (np.cos(th) * _GL_W).sum(axis=1) * h
    dy = (np.sin(th) * _GL_W).sum(axis=1) * h

    poses = np.empty((m + 1, 3))
    poses[0] = (start.x, start.y, start.heading)
    poses[1:, 0] = start.x + np.cumsum(dx)
    poses[1:, 1] = start.y + np.cumsum(dy)
    poses[1:, 2] = wrap_angle(heading(np.arange(1, m + 1) * h))
    return Trajectory(poses, u, h)


def max_curvature(traj: Trajectory) -> float:
    """Largest |curvature| along the path.

    Linear interpolation between knots peaks at a knot, so spline paths use
    the analytic value; pose-only paths fall back to finite differences.
    """
    if traj.control is not None:
        return max(abs(traj.control.kappa_start), abs(traj.control.kappa_end))
    th = traj.poses[:, 2]
    if th.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(wrap_angle(np.diff(th)))) / traj.ds)


@dataclass(frozen=True)
class SafetyVerdict:
    valid: bool
    first_violation_index: int = None
    cause: str = None


def check_path(traj: Trajectory, grid: OccupancyGrid, delta_safe: float,
               delta_kappa: float, robot_radius: float, *,
               free_threshold: float = 0.35, masks: SafetyMasks = None) -> SafetyVerdict:
    """Curvature gate first, then a waypoint walk over the inflated belief.

    A waypoint fails when the robot-radius disc around it contains a cell with
    p >= delta_safe (occupancy) or an unobserved cell with p in
    [free_threshold, delta_safe) (unknown-region). If the curvature bound is
    exceeded no occupancy test runs at all.
    """
    if max_curvature(traj) > delta_kappa:
        return SafetyVerdict(False, None, CAUSE_CURVATURE)
    if masks is None:
        masks = safety_masks(grid, delta_safe, free_threshold, robot_radius)
    ix, iy = grid.cell_of(traj.poses[:, 0], traj.poses[:, 1])
    oob = (ix < 0) | (ix >= grid.width) | (iy < 0) | (iy >= grid.height)
    ixc = np.clip(ix, 0, grid.width - 1)
    iyc = np.clip(iy, 0, grid.height - 1)
    occ = masks.occupied[iyc, ixc] & ~oob
    unk = masks.unknown[iyc, ixc] & ~oob
    bad = oob | occ | unk
    if not bad.any():
        return SafetyVerdict(True)
    k = int(np.argmax(bad))
    if oob[k]:
        cause = CAUSE_OOB
    elif occ[k]:
        cause = CAUSE_OCCUPANCY
    else:
        cause = CAUSE_UNKNOWN
    return SafetyVerdict(False, k, cause)


def valid_prefix_decomposition(traj: Trajectory, verdict: SafetyVerdict, check,
                               bounds: ControlBounds, margin: float = None):
    """Expand an invalid path into labelled derived controls.

    Derived inputs keep the original curvature knots and vary only arc length.
    Every emitted label comes from re-running `check` on the re-generated
    trajectory (shortening the length re-interpolates curvature, so the prefix
    path is not geometrically identical to the original's prefix). Curvature
    violations are length-independent here, so they only yield invalid rungs.

    Returns a list of (ControlInput, is_valid).
    """
    if verdict.valid:
        raise ValueError("decomposition expects an invalid verdict")
    u = traj.control
    L = u.arc_length
    out = []

    def derived(length):
        return ControlInput(u.kappa_start, u.kappa_end,
                            float(np.clip(length, bounds.length_min, bounds.length_max)))

    if verdict.cause == CAUSE_CURVATURE:
        for frac in (0.33, 0.66):
            cand = derived(bounds.length_min + frac * (L - bounds.length_min))
            if abs(cand.arc_length - L) > 1e-9:
                out.append((cand, False))
        return _dedupe(out)

    if margin is None:
        margin = 2.0 * traj.ds
    s_viol = verdict.first_violation_index * traj.ds

    # longest valid prefix, shrinking by `margin` per attempt
    lp = s_viol - margin
    for _ in range(6):
        if lp < bounds.length_min:
            break
        cand = derived(lp)
        v = check(cand)
        out.append((cand, v.valid))
        if v.valid:
            break
        lp -= margin

    # rungs straddling the violation boundary
    for length in (s_viol, s_viol + margin):
        if bounds.length_min <= length <= min(L, bounds.length_max) \
                and abs(length - L) > 1e-9:
            cand = derived(length)
            out.append((cand, check(cand).valid))
    return _dedupe(out)


def _dedupe(pairs):
    seen, out = set(), []
    for u, lab in pairs:
        key = round(u.arc_length, 6)
        if key not in seen:
            seen.add(key)
            out.append((u, lab))
    return out


def coarse_global_path(grid: OccupancyGrid, start: Pose2D, *,
                       free_threshold: float = 0.35, occ_threshold: float = 0.65,
                       min_cluster_size: int = 3, lookahead: float = 2.0):
    """Grid BFS from the robot to the nearest frontier centroid.

    The path may cross unobserved cells (it only avoids believed-occupied
    ones); it provides a direction hint, not a traversable route. Returns
    (direction, polyline) or None when no frontier is reachable.
    """
    fr = frontiers(grid, free_threshold, occ_threshold, min_cluster_size)
    if len(fr) == 0:
        return None
    passable = grid.probabilities() < occ_threshold
    h, w = passable.shape
    six, siy = grid.cell_of(start.x, start.y)
    if not (0 <= six < w and 0 <= siy < h):
        return None

    target = np.zeros((h, w), dtype=bool)
    for c in fr.clusters:
        cy, cx = min(map(tuple, c.cells),
                     key=lambda rc: (grid.cell_center(rc[1], rc[0])[0] - c.centroid[0]) ** 2
                     + (grid.cell_center(rc[1], rc[0])[1] - c.centroid[1]) ** 2)
        target[cy, cx] = True

    parent = np.full((h, w), -1, dtype=np.int64)
    parent[siy, six] = siy * w + six
    queue = deque([(six, siy)])
    goal = None
    while queue:
        cx, cy = queue.popleft()
        if target[cy, cx]:
            goal = (cx, cy)
            break
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                nx, ny = cx + dx, cy + dy
                if (dx or dy) and 0 <= nx < w and 0 <= ny < h \
                        and parent[ny, nx] < 0 and passable[ny, nx]:
                    parent[ny, nx] = cy * w + cx
                    queue.append((nx, ny))
    if goal is None:
        return None

    cells = []
    cx, cy = goal
    while True:
        cells.append((cx, cy))
        p = parent[cy, cx]
        px, py = p % w, p // w
        if (px, py) == (cx, cy):
            break
        cx, cy = px, py
    cells.reverse()
    xs, ys = grid.cell_center(np.array([c[0] for c in cells]),
                              np.array([c[1] for c in cells]))
    polyline = np.stack([xs, ys], axis=1)

    seg = np.hypot(np.diff(polyline[:, 0], prepend=polyline[0, 0]),
                   np.diff(polyline[:, 1], prepend=polyline[0, 1]))
    cum = np.cumsum(seg)
    k = int(np.searchsorted(cum, lookahead))
    k = min(max(k, 1 if len(cells) > 1 else 0), len(cells) - 1)
    direction = float(np.arctan2(polyline[k, 1] - start.y, polyline[k, 0] - start.x)) \
        if k > 0 else start.heading
    return direction, polyline


def bearing_penalty(bearing: float, coarse_direction: float) -> float:
    """(1 - cos(d))/2: 0 aligned with the coarse direction, 1 opposite."""
    return 0.5 * (1.0 - np.cos(wrap_angle(bearing - coarse_direction)))


def heading_penalty(u: ControlInput, start: Pose2D, coarse_direction: float) -> float:
    """Penalty on the bearing from start to the path endpoint."""
    traj = spline_trajectory(u, start, max(u.arc_length / 8.0, 1e-6))
    end = traj.end_pose
    bearing = np.arctan2(end.y - start.y, end.x - start.x)
    return float(bearing_penalty(bearing, coarse_direction))


def length_penalty(u: ControlInput, bounds: ControlBounds) -> float:
    """Quadratic penalty away from the preferred length, 0 at length_ref."""
    z = (u.arc_length - bounds.length_ref) / (bounds.length_max - bounds.length_min)
    return float(z * z)
