"""Occupancy-grid belief: scan integration, entropy, raycasting, frontiers.

Each cell holds an independent Bernoulli occupancy belief stored as log-odds,
so the map posterior factorizes over cells and scan integration is additive.
Cell probabilities are clamped to [0.001, 0.999] to keep the entropy finite
and updates reversible; an untouched cell has log-odds exactly 0 (p = 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import expit, logit

from . import _kernels
from .geometry import LaserConfig, Pose2D

P_MIN = 0.001
LO_LIM = float(logit(1.0 - P_MIN))  # 6.90675...


class OutOfBoundsError(ValueError):
    """A queried position lies outside the grid."""


@dataclass(frozen=True)
class SensorModel:
    """Inverse sensor model for additive log-odds scan integration."""

    logodds_hit: float = 0.85
    logodds_miss: float = -0.4
    occ_threshold: float = 0.65

    def __post_init__(self):
        if self.logodds_hit <= 0:
            raise ValueError("logodds_hit must be positive")
        if self.logodds_miss >= 0:
            raise ValueError("logodds_miss must be negative")
        if not 0.5 < self.occ_threshold < 1.0:
            raise ValueError("occ_threshold must lie in (0.5, 1)")


class OccupancyGrid:
    """Log-odds occupancy belief over a regular 2D grid.

    `origin` is the world position of the lower-left corner of cell (0, 0);
    `logodds` is indexed [iy, ix]. The grid is single-writer: planners operate
    on `copy()` snapshots.
    """

    def __init__(self, width, height, resolution, origin=(0.0, 0.0), logodds=None):
        if width < 1 or height < 1:
            raise ValueError("grid must be at least 1x1")
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        self.width = int(width)
        self.height = int(height)
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        if logodds is None:
            self.logodds = np.zeros((self.height, self.width))
        else:
            logodds = np.asarray(logodds, dtype=float)
            if logodds.shape != (self.height, self.width):
                raise ValueError("logodds shape mismatch")
            self.logodds = np.clip(logodds, -LO_LIM, LO_LIM)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.width, self.height, self.resolution,
                             self.origin, self.logodds.copy())

    def probabilities(self) -> np.ndarray:
        return expit(self.logodds)

    def to_grid(self, x, y):
        """World position -> continuous grid coordinates (units of cells)."""
        return ((np.asarray(x) - self.origin[0]) / self.resolution,
                (np.asarray(y) - self.origin[1]) / self.resolution)

    def cell_of(self, x, y):
        gx, gy = self.to_grid(x, y)
        return np.floor(gx).astype(int), np.floor(gy).astype(int)

    def cell_center(self, ix, iy):
        return (self.origin[0] + (np.asarray(ix) + 0.5) * self.resolution,
                self.origin[1] + (np.asarray(iy) + 0.5) * self.resolution)

    def contains(self, x, y) -> bool:
        gx, gy = self.to_grid(x, y)
        return bool(np.all((gx >= 0) & (gx < self.width) & (gy >= 0) & (gy < self.height)))

    @property
    def extent(self):
        return (self.width * self.resolution, self.height * self.resolution)


def entropy(grid: OccupancyGrid) -> float:
    """Total map entropy in bits: sum of per-cell Bernoulli entropies."""
    p = grid.probabilities()
    return float(np.sum(-(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p))))


def integrate_scan(grid: OccupancyGrid, pose: Pose2D, ranges, laser: LaserConfig,
                   model: SensorModel) -> OccupancyGrid:
    """Fold one range scan into the belief (in place; the grid is returned).

    Cells a beam crosses receive `logodds_miss`; the endpoint cell receives
    `logodds_hit` unless the beam returned max range, which carries no
    endpoint evidence.
    """
    if not grid.contains(pose.x, pose.y):
        raise OutOfBoundsError(f"scan pose ({pose.x:.2f}, {pose.y:.2f}) outside grid")
    ranges = np.ascontiguousarray(ranges, dtype=float)
    if ranges.shape[0] != laser.beam_count:
        raise ValueError("ranges length must equal laser beam count")
    gx, gy = grid.to_grid(pose.x, pose.y)
    _kernels.integrate_scan_kernel(
        grid.logodds, float(gx), float(gy),
        laser.beam_angles(pose.heading), ranges / grid.resolution,
        laser.max_range / grid.resolution,
        model.logodds_hit, model.logodds_miss, LO_LIM)
    return grid


def raycast(grid: OccupancyGrid, origin, angle, max_range, occ_threshold=0.65):
    """Walk the ray cell-by-cell; stop at the first cell with p >= occ_threshold.

    Returns (distance_m, hit); (max_range, False) when nothing blocks the ray.
    """
    x, y = origin
    if not grid.contains(x, y):
        raise OutOfBoundsError(f"raycast origin ({x:.2f}, {y:.2f}) outside grid")
    occ_test = (grid.logodds >= logit(occ_threshold)).astype(np.float64)
    gx, gy = grid.to_grid(x, y)
    d, hit = _kernels.raycast_occupied(occ_test, grid.width, grid.height,
                                       float(gx), float(gy), float(angle),
                                       max_range / grid.resolution)
    return d * grid.resolution, bool(hit)


@dataclass(frozen=True)
class FrontierCluster:
    centroid: tuple        # world (x, y)
    size: int              # member cell count
    cells: np.ndarray = field(repr=False, compare=False, default=None)  # (n, 2) [iy, ix]


@dataclass(frozen=True)
class FrontierSet:
    clusters: list

    def __len__(self):
        return len(self.clusters)

    def centroids(self) -> np.ndarray:
        if not self.clusters:
            return np.zeros((0, 2))
        return np.array([c.centroid for c in self.clusters])


def frontiers(grid: OccupancyGrid, free_threshold=0.35, occ_threshold=0.65,
              min_cluster_size=3) -> FrontierSet:
    """Free cells 8-adjacent to unobserved cells, clustered by 8-connectivity."""
    p = grid.probabilities()
    free = p < free_threshold
    unknown = (p >= free_threshold) & (p < occ_threshold)
    near_unknown = ndimage.binary_dilation(unknown, structure=np.ones((3, 3), dtype=bool))
    frontier = free & near_unknown
    labels, n = ndimage.label(frontier, structure=np.ones((3, 3), dtype=int))
    clusters = []
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        if ys.size < min_cluster_size:
            continue
        cx, cy = grid.cell_center(xs, ys)
        cells = np.stack([ys, xs], axis=1)
        clusters.append(FrontierCluster((float(np.mean(cx)), float(np.mean(cy))),
                                        int(ys.size), cells))
    clusters.sort(key=lambda c: (-c.size, c.centroid))
    return FrontierSet(clusters)


# ---------------------------------------------------------------------------
# Footprint safety masks
# ---------------------------------------------------------------------------

def disc_structure(radius_m, resolution) -> np.ndarray:
    """Boolean disc of cells whose centers lie within radius of the center cell."""
    r = max(0, int(np.floor(radius_m / resolution + 1e-9)))
    di, dj = np.mgrid[-r:r + 1, -r:r + 1]
    return (di * di + dj * dj) * resolution ** 2 <= radius_m ** 2 + 1e-12


@dataclass(frozen=True)
class SafetyMasks:
    """Inflated per-cell verdicts: a cell is flagged when the robot disc
    centered there would contain an occupied (resp. unobserved) cell."""

    occupied: np.ndarray
    unknown: np.ndarray
    delta_safe: float
    free_threshold: float
    robot_radius: float


def safety_masks(grid: OccupancyGrid, delta_safe, free_threshold, robot_radius) -> SafetyMasks:
    p = grid.probabilities()
    occ = p >= delta_safe
    unk = (p >= free_threshold) & (p < delta_safe)
    disc = disc_structure(robot_radius, grid.resolution)
    return SafetyMasks(
        occupied=ndimage.binary_dilation(occ, structure=disc),
        unknown=ndimage.binary_dilation(unk, structure=disc),
        delta_safe=float(delta_safe),
        free_threshold=float(free_threshold),
        robot_radius=float(robot_radius),
    )


# ---------------------------------------------------------------------------
# PGM import/export
# ---------------------------------------------------------------------------

def _meta_path(path):
    path = str(path)
    return (path[:-4] if path.endswith(".pgm") else path) + ".meta"


def save_pgm(grid: OccupancyGrid, path) -> None:
    """Write binary PGM (P5): 0=occupied, 255=free, 127=unknown, linear between.

    The raster top row is the highest-y grid row. A `.meta` sidecar records
    resolution and origin.
    """
    p = grid.probabilities()
    g = np.rint((1.0 - p) * 255.0).astype(np.int64)
    # keep the sign of accumulated evidence through quantization
    exact_unknown = grid.logodds == 0.0
    g[(g == 127) & ~exact_unknown & (grid.logodds > 0)] = 126
    g[(g == 127) & ~exact_unknown & (grid.logodds < 0)] = 128
    g[exact_unknown] = 127
    img = np.flipud(np.clip(g, 0, 255).astype(np.uint8))
    with open(path, "wb") as f:
        f.write(f"P5\n{grid.width} {grid.height}\n255\n".encode())
        f.write(img.tobytes())
    with open(_meta_path(path), "w") as f:
        f.write(f"resolution = {grid.resolution!r}\n")
        f.write(f"origin_x = {grid.origin[0]!r}\n")
        f.write(f"origin_y = {grid.origin[1]!r}\n")


def _read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval; '#' comments allowed
    tokens, i = [], 2
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(int(data[i:j]))
        i = j
    i += 1  # single whitespace after maxval
    w, h, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: expected 8-bit PGM")
    img = np.frombuffer(data[i:i + w * h], dtype=np.uint8).reshape(h, w)
    return np.flipud(img).copy(), w, h


def _read_meta(path, resolution, origin):
    import os

    meta = _meta_path(path)
    vals = {}
    if os.path.exists(meta):
        with open(meta) as f:
            for line in f:
                line = line.split("#", 1)[0].strip()
                if "=" in line:
                    k, v = line.split("=", 1)
                    vals[k.strip()] = float(v.strip())
    res = vals.get("resolution", resolution)
    if res is None:
        raise ValueError(f"{path}: no .meta sidecar and no resolution given")
    ox = vals.get("origin_x", origin[0])
    oy = vals.get("origin_y", origin[1])
    return float(res), (float(ox), float(oy))


def load_pgm(path, resolution=None, origin=(0.0, 0.0)) -> OccupancyGrid:
    img, w, h = _read_pgm(path)
    res, org = _read_meta(path, resolution, origin)
    lo = np.empty((h, w))
    unknown = img == 127
    p = np.clip(1.0 - img / 255.0, P_MIN, 1.0 - P_MIN)
    lo[:] = logit(p)
    lo[unknown] = 0.0
    return OccupancyGrid(w, h, res, org, lo)
