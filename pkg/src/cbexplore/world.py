"""Ground-truth worlds, lidar simulation, robot kinematics.

Worlds are boolean occupancy rasters, immutable for the length of an episode
and walled along the boundary. Everything is deterministic in (seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import _kernels
from .geometry import LaserConfig, Pose2D, RobotConfig, wrap_angle
from .grid import OccupancyGrid, SensorModel, disc_structure, integrate_scan, _read_pgm


class GenerationError(RuntimeError):
    """World generation could not satisfy the spec within bounded retries."""


class CollisionStateError(RuntimeError):
    """A scan was requested from inside an occupied cell."""


class WorldModel:
    """Immutable boolean occupancy raster with walled boundary."""

    def __init__(self, occupied, resolution, origin=(0.0, 0.0)):
        occ = np.asarray(occupied, dtype=bool).copy()
        occ[0, :] = occ[-1, :] = True
        occ[:, 0] = occ[:, -1] = True
        occ.setflags(write=False)
        self.occupied = occ
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        self._occ_f = occ.astype(np.float64)
        self._occ_f.setflags(write=False)

    @property
    def height(self):
        return self.occupied.shape[0]

    @property
    def width(self):
        return self.occupied.shape[1]

    @property
    def extent(self):
        return (self.width * self.resolution, self.height * self.resolution)

    def to_grid(self, x, y):
        return ((np.asarray(x) - self.origin[0]) / self.resolution,
                (np.asarray(y) - self.origin[1]) / self.resolution)

    def cell_of(self, x, y):
        gx, gy = self.to_grid(x, y)
        return np.floor(gx).astype(int), np.floor(gy).astype(int)

    def contains(self, x, y) -> bool:
        gx, gy = self.to_grid(x, y)
        return bool(np.all((gx >= 0) & (gx < self.width) & (gy >= 0) & (gy < self.height)))

    def is_occupied(self, x, y) -> bool:
        if not self.contains(x, y):
            return True
        ix, iy = self.cell_of(x, y)
        return bool(self.occupied[iy, ix])

    def disc_collides(self, x, y, radius) -> bool:
        """True when a robot disc at (x, y) overlaps an occupied cell."""
        if not self.contains(x, y):
            return True
        ix, iy = self.cell_of(x, y)
        disc = disc_structure(radius, self.resolution)
        r = disc.shape[0] // 2
        y0, y1 = max(0, iy - r), min(self.height, iy + r + 1)
        x0, x1 = max(0, ix - r), min(self.width, ix + r + 1)
        sub = self.occupied[y0:y1, x0:x1]
        d = disc[r - (iy - y0):r + (y1 - iy), r - (ix - x0):r + (x1 - ix)]
        return bool(np.any(sub & d))

    def matching_grid(self) -> OccupancyGrid:
        """An all-unknown belief grid with identical geometry."""
        return OccupancyGrid(self.width, self.height, self.resolution, self.origin)

    def reachable_free(self, start_xy) -> np.ndarray:
        """4-connected flood fill of free cells from the start position."""
        ix, iy = self.cell_of(*start_xy)
        free = ~self.occupied
        labels, _ = ndimage.label(free)  # 4-connectivity by default
        if not free[iy, ix]:
            return np.zeros_like(free)
        return labels == labels[iy, ix]

    @staticmethod
    def from_pgm(path, resolution=None, origin=(0.0, 0.0)) -> "WorldModel":
        """Import ground truth from PGM: gray < 128 is occupied."""
        from .grid import _read_meta

        img, w, h = _read_pgm(path)
        res, org = _read_meta(path, resolution, origin)
        return WorldModel(img < 128, res, org)


@dataclass(frozen=True)
class WorldSpec:
    """Parameters for random unstructured worlds (walled arena with clutter)."""

    extent: float = 20.0                  # square side, meters
    resolution: float = 0.1
    obstacle_count: tuple = (10, 25)      # inclusive range, drawn per seed
    obstacle_size_range: tuple = (0.6, 2.4)
    clutter_style: str = "mixed"          # "rect" or "mixed" (adds L-shapes)
    gap_min: float = 1.0                  # obstacles either merge or leave this gap
    start: tuple = None                   # world (x, y); default arena center
    start_clearance: float = 1.0
    min_connectivity: float = 0.5         # start must reach this free fraction
    max_attempts: int = 30

    def __post_init__(self):
        if self.extent <= 0 or self.resolution <= 0:
            raise ValueError("extent and resolution must be positive")
        if self.obstacle_size_range[0] <= 0:
            raise ValueError("obstacle sizes must be positive")
        if self.clutter_style not in ("rect", "mixed"):
            raise ValueError("clutter_style must be 'rect' or 'mixed'")

    @property
    def start_xy(self):
        return self.start if self.start is not None else (self.extent / 2.0, self.extent / 2.0)


def _place_rect(occ, free_zone, res, rng, size_range, gap_cells, extent_cells):
    """Try one axis-aligned rectangle; returns True when placed.

    Placement keeps gaps between distinct obstacles (and the wall) either zero
    (merged) or at least `gap_cells`, so no untraversable slivers appear.
    """
    w = max(1, int(round(rng.uniform(*size_range) / res)))
    h = max(1, int(round(rng.uniform(*size_range) / res)))
    x0 = int(rng.integers(1, max(2, extent_cells - w - 1)))
    y0 = int(rng.integers(1, max(2, extent_cells - h - 1)))
    box = (slice(y0, y0 + h), slice(x0, x0 + w))
    if np.any(free_zone[box]):
        return False
    g = gap_cells
    y0g, y1g = max(0, y0 - g), min(extent_cells, y0 + h + g)
    x0g, x1g = max(0, x0 - g), min(extent_cells, x0 + w + g)
    touches_with_gap = np.any(occ[y0g:y1g, x0g:x1g])
    touches_direct = np.any(occ[max(0, y0 - 1):y0 + h + 1, max(0, x0 - 1):x0 + w + 1])
    if touches_with_gap and not touches_direct:
        return False  # would create a narrow sliver
    occ[box] = True
    return True


def generate_world(seed, spec: WorldSpec = WorldSpec()) -> WorldModel:
    """Deterministic random world; retries until the start region stays open."""
    n_cells = int(round(spec.extent / spec.resolution))
    if n_cells < 8:
        raise GenerationError("extent too small for the given resolution")
    gap_cells = max(1, int(np.ceil(spec.gap_min / spec.resolution)))
    sx, sy = spec.start_xy

    for attempt in range(spec.max_attempts):
        rng = np.random.default_rng([int(seed), attempt, 0x57F])
        occ = np.zeros((n_cells, n_cells), dtype=bool)
        occ[0, :] = occ[-1, :] = True
        occ[:, 0] = occ[:, -1] = True

        free_zone = np.zeros_like(occ)
        cx, cy = int(sx / spec.resolution), int(sy / spec.resolution)
        r = int(np.ceil(spec.start_clearance / spec.resolution))
        yy, xx = np.ogrid[:n_cells, :n_cells]
        free_zone[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = True

        lo, hi = spec.obstacle_count if np.iterable(spec.obstacle_count) \
            else (spec.obstacle_count, spec.obstacle_count)
        target = int(rng.integers(int(lo), int(hi) + 1))
        placed = 0
        budget = 60 * max(target, 1)
        while placed < target and budget > 0:
            budget -= 1
            parts = 1
            if spec.clutter_style == "mixed" and rng.random() < 0.4:
                parts = 2  # two touching rectangles form an L
            ok = _place_rect(occ, free_zone, spec.resolution, rng,
                             spec.obstacle_size_range, gap_cells, n_cells)
            if ok and parts == 2:
                _place_rect(occ, free_zone, spec.resolution, rng,
                            spec.obstacle_size_range, 0, n_cells)
            placed += 1 if ok else 0
        if placed < target:
            continue

        world = WorldModel(occ, spec.resolution)
        if world.is_occupied(sx, sy):
            continue
        reach = world.reachable_free((sx, sy))
        free_total = int(np.sum(~world.occupied))
        if free_total and reach.sum() / free_total >= spec.min_connectivity:
            return world
    raise GenerationError(
        f"no valid world for seed {seed} after {spec.max_attempts} attempts")


def simulate_scan(world: WorldModel, pose: Pose2D, laser: LaserConfig, rng) -> np.ndarray:
    """One noisy range per beam, raycast against the ground truth."""
    if world.is_occupied(pose.x, pose.y):
        raise CollisionStateError(
            f"scan pose ({pose.x:.2f}, {pose.y:.2f}) is inside an obstacle")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    gx, gy = world.to_grid(pose.x, pose.y)
    dist = _kernels.scan_ranges(world._occ_f, float(gx), float(gy),
                                laser.beam_angles(pose.heading),
                                laser.max_range / world.resolution)
    dist = dist * world.resolution
    if laser.range_noise_sigma > 0:
        dist = dist + rng.normal(0.0, laser.range_noise_sigma, size=dist.shape)
    return np.clip(dist, 0.0, laser.max_range)


@dataclass(frozen=True)
class MapperState:
    """Belief map plus the models needed to fold scans into it."""

    grid: OccupancyGrid
    laser: LaserConfig
    sensor: SensorModel


@dataclass
class ExecutionResult:
    final_pose: Pose2D
    scans: int
    collision: bool
    aborted: bool            # stopped by the safety re-check, not a crash
    distance: float          # arc length actually driven
    elapsed: float           # simulated seconds spent driving
    steps: list = field(default_factory=list)  # (t, pose) at each scan tick


def transform_poses(poses, old_start, new_start) -> np.ndarray:
    """Rigidly re-anchor a pose array (N, 3) from one start pose to another."""
    p = np.asarray(poses, dtype=float)
    dth = new_start.heading - old_start.heading
    c, s = np.cos(dth), np.sin(dth)
    rel = p[:, :2] - np.array([old_start.x, old_start.y])
    out = np.empty_like(p)
    out[:, 0] = new_start.x + c * rel[:, 0] - s * rel[:, 1]
    out[:, 1] = new_start.y + s * rel[:, 0] + c * rel[:, 1]
    out[:, 2] = wrap_angle(p[:, 2] + dth)
    return out


def execute_path(world: WorldModel, robot: RobotConfig, traj, mapper: MapperState,
                 rng, *, robot_radius=0.0, recheck=None, true_start: Pose2D = None,
                 on_step=None) -> ExecutionResult:
    """Drive along `traj` at constant speed, scanning every control period.

    Collision is checked against the ground truth at every trajectory waypoint
    (finer than the control period, so thin walls cannot be jumped). When
    `recheck(remaining_poses)` returns False after a map update the execution
    aborts cleanly: the belief no longer supports the rest of the path.
    When `true_start` differs from the trajectory start the same controls are
    replayed open-loop from the true pose (rigid transform of the path).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    poses = traj.poses
    believed = poses
    if true_start is not None:
        poses = transform_poses(poses, traj.start_pose, true_start)
    ds = traj.ds
    n = poses.shape[0]
    period_len = robot.speed * robot.control_period
    scans = 0
    result_steps = []

    last = 0
    collision = aborted = False
    for i in range(n):
        x, y, th = poses[i]
        last = i
        if (world.disc_collides(x, y, robot_radius) if robot_radius > 0
                else world.is_occupied(x, y)):
            collision = True
            break
        dist = i * ds
        if dist >= scans * period_len - 1e-9:
            bx, by, bth = believed[i]
            scan = simulate_scan(world, Pose2D(x, y, th), mapper.laser, rng)
            integrate_scan(mapper.grid, Pose2D(bx, by, bth), scan, mapper.laser,
                           mapper.sensor)
            scans += 1
            t = dist / robot.speed
            result_steps.append((t, Pose2D(x, y, th)))
            if on_step is not None:
                on_step(t, Pose2D(x, y, th))
            if recheck is not None and i < n - 1 and not recheck(believed[i:]):
                aborted = True
                break
    distance = last * ds
    final = Pose2D(*poses[last])
    return ExecutionResult(final, scans, collision, aborted, distance,
                           distance / robot.speed, result_steps)
