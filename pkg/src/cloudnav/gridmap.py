"""Log-odds ray-casting occupancy grid, for comparison against the point-cloud map.

Thin objects in front of background surfaces get "seen through": most rays that
traverse a thin obstacle's cell endpoint on the background, so miss updates
outnumber hits and the cell never crosses the occupancy threshold, while the
same returns stay plainly visible in the point-cloud map. This module exists to
reproduce that ordering; it is not a general-purpose mapping backend.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .core import PointCloud
from .sensor import Environment, generate_scan, yaw_rotation
from .spatial import TemporalLocalMap, dump_map


@dataclass(frozen=True)
class GridConfig:
    resolution: float
    origin: np.ndarray  # world position of the (0,0,0) cell corner
    size: np.ndarray  # extent in meters, grid covers [origin, origin + size)
    log_odds_hit: float = 0.85
    log_odds_miss: float = -0.4
    occupied_probability: float = 0.5
    clamp_min: float = -2.0
    clamp_max: float = 3.5

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=float))
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        if not np.all(self.size > 0):
            raise ValueError("size must be positive on every axis")
        if not (0 < self.occupied_probability < 1):
            raise ValueError("occupied_probability must be in (0, 1)")

    @property
    def shape(self) -> tuple:
        return tuple(int(math.ceil(s / self.resolution)) for s in self.size)

    @property
    def occupied_log_odds(self) -> float:
        p = self.occupied_probability
        return math.log(p / (1.0 - p))


@dataclass
class IntegrateStats:
    rays: int = 0
    traversed_cells: int = 0
    hit_cells: int = 0
    seconds: float = 0.0


class OccupancyGrid:
    """Dense grid of per-cell log-odds with hit/miss ray updates.

    Cell indexing uses the same world-anchored half-open convention as the
    voxel filter. Updates are applied per scan: every cell a ray traverses
    gets one miss, the endpoint cell gets one hit instead, then all touched
    cells are clamped.
    """

    def __init__(self, config: GridConfig):
        self.config = config
        self.log_odds = np.zeros(config.shape, dtype=float)

    def cell_of(self, p) -> tuple:
        c = np.floor((np.asarray(p, dtype=float) - self.config.origin) / self.config.resolution)
        return tuple(c.astype(np.int64))

    def in_bounds(self, cells: np.ndarray) -> np.ndarray:
        shape = np.array(self.config.shape)
        return ((cells >= 0) & (cells < shape)).all(axis=-1)

    def occupied_mask(self) -> np.ndarray:
        return self.log_odds > self.config.occupied_log_odds

    def probabilities(self) -> np.ndarray:
        return 1.0 - 1.0 / (1.0 + np.exp(self.log_odds))

    def _clip_segments(self, origin: np.ndarray, ends: np.ndarray):
        """Liang-Barsky clip of each segment origin->end to the grid box.

        Returns (starts, stops, end_inside) for the surviving parameter range.
        """
        lo = self.config.origin
        hi = lo + np.array(self.config.shape) * self.config.resolution
        d = ends - origin
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origin) / d
            t2 = (hi - origin) / d
        parallel = np.abs(d) < 1e-15
        inside = (origin >= lo) & (origin <= hi)
        lows = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        highs = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        ta = np.maximum(lows.max(axis=1), 0.0)
        tb = np.minimum(highs.min(axis=1), 1.0)
        valid = ta <= tb
        end_inside = self.in_bounds(
            np.floor((ends - lo) / self.config.resolution).astype(np.int64)
        )
        return ta, tb, valid, end_inside

    def traverse(self, origin, ends: np.ndarray):
        """Integer-grid traversal of each segment origin->ends[i], clipped to
        the grid. Returns (ray_index, cells) covering every cell each segment
        passes through exactly once.
        """
        cfg = self.config
        res = cfg.resolution
        origin = np.asarray(origin, dtype=float)
        ends = np.atleast_2d(np.asarray(ends, dtype=float))
        ta, tb, valid, _ = self._clip_segments(origin, ends)
        idx = np.nonzero(valid)[0]
        if len(idx) == 0:
            return np.empty(0, dtype=np.int64), np.empty((0, 3), dtype=np.int64)
        d = ends[idx] - origin
        starts = origin + ta[idx, None] * d
        stops = origin + tb[idx, None] * d

        shape = np.array(cfg.shape)
        cell = np.floor((starts - cfg.origin) / res).astype(np.int64)
        np.clip(cell, 0, shape - 1, out=cell)
        end_cell = np.floor((stops - cfg.origin) / res).astype(np.int64)
        np.clip(end_cell, 0, shape - 1, out=end_cell)

        step = np.where(d > 0, 1, -1).astype(np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_delta = res / np.abs(d)
            next_bound = cfg.origin + (cell + (step > 0)) * res
            t_max = (next_bound - starts) / d
        zero = np.abs(d) < 1e-15
        t_delta[zero] = np.inf
        t_max[zero] = np.inf

        out_rays, out_cells = [], []
        active = np.arange(len(idx))
        max_steps = int(np.abs(end_cell - cell).sum(axis=1).max()) + 1
        for _ in range(max_steps + 1):
            out_rays.append(idx[active])
            out_cells.append(cell[active].copy())
            # done once the end cell is reached (or numerically passed) on every axis
            done = (((cell[active] - end_cell[active]) * step[active]) >= 0).all(axis=1)
            keep = ~done
            if not keep.any():
                break
            active = active[keep]
            axis = np.argmin(t_max[active], axis=1)
            cell[active, axis] += step[active, axis]
            t_max[active, axis] += t_delta[active, axis]
            # numeric safety: keep indices inside the grid
            cell[active] = np.clip(cell[active], 0, shape - 1)
        return np.concatenate(out_rays), np.concatenate(out_cells)

    def integrate_scan(self, sensor_origin, scan: PointCloud) -> IntegrateStats:
        """Apply one scan: misses along each ray, a hit at each in-bounds endpoint."""
        t0 = time.perf_counter()
        cfg = self.config
        stats = IntegrateStats(rays=len(scan))
        if len(scan) == 0:
            stats.seconds = time.perf_counter() - t0
            return stats
        origin = np.asarray(sensor_origin, dtype=float)
        ends = scan.points
        ray_idx, cells = self.traverse(origin, ends)
        if len(cells) == 0:
            stats.seconds = time.perf_counter() - t0
            return stats

        end_cells = np.floor((ends - cfg.origin) / cfg.resolution).astype(np.int64)
        end_ok = self.in_bounds(end_cells)
        # a traversal record is the ray's endpoint cell iff it matches that
        # ray's (in-bounds) end cell; straight rays visit each cell once
        is_hit = end_ok[ray_idx] & (cells == end_cells[ray_idx]).all(axis=1)

        flat = np.ravel_multi_index(tuple(cells.T), cfg.shape)
        hit_counts = np.bincount(flat[is_hit], minlength=self.log_odds.size)
        miss_counts = np.bincount(flat[~is_hit], minlength=self.log_odds.size)
        delta = hit_counts * cfg.log_odds_hit + miss_counts * cfg.log_odds_miss
        flat_lo = self.log_odds.reshape(-1)
        touched = delta != 0
        flat_lo[touched] = np.clip(
            flat_lo[touched] + delta[touched], cfg.clamp_min, cfg.clamp_max
        )
        stats.traversed_cells = len(cells)
        stats.hit_cells = int(is_hit.sum())
        stats.seconds = time.perf_counter() - t0
        return stats

    def export_rows(self):
        """(i, j, k, probability) rows for every touched cell."""
        touched = np.nonzero(self.log_odds != 0)
        probs = self.probabilities()[touched]
        return [
            (int(i), int(j), int(k), float(p))
            for (i, j, k), p in zip(np.stack(touched, axis=1), probs)
        ]


def bar_cells(grid: OccupancyGrid, bar_obstacle, t: float, samples_per_cell: int = 10) -> set:
    """Ground-truth set of grid cells overlapping the bar at time t, computed by
    dense sampling of the capsule axis and surface."""
    shape = bar_obstacle.shape
    off = bar_obstacle.offset_at(float(t))
    p0 = shape.p0 + off
    p1 = shape.p1 + off
    r = shape.radius
    step = grid.config.resolution / samples_per_cell
    n = max(int(math.ceil(np.linalg.norm(p1 - p0) / step)), 1)
    u = np.linspace(0.0, 1.0, n + 1)
    axis_pts = p0 + u[:, None] * (p1 - p0)
    offsets = np.array(
        [[0, 0, 0], [r, 0, 0], [-r, 0, 0], [0, r, 0], [0, -r, 0], [0, 0, r], [0, 0, -r]]
    )
    pts = (axis_pts[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    cells = np.floor((pts - grid.config.origin) / grid.config.resolution).astype(np.int64)
    ok = grid.in_bounds(cells)
    return {tuple(c) for c in cells[ok]}


def export_grid_rows(grid: OccupancyGrid, path) -> None:
    """Write `i j k probability` rows for every touched cell, for slice plots."""
    with open(path, "w") as f:
        f.write("i j k probability\n")
        for i, j, k, p in grid.export_rows():
            f.write(f"{i} {j} {k} {p:.6f}\n")


def thin_object_experiment(scenario, frames: int | None = None, export_dir=None) -> dict:
    """Feed identical scans to a ray-cast occupancy grid and the temporal
    point-cloud map, then compare how each represents a thin bar.

    Reports the fraction of ground-truth bar cells that end up occupied, the
    number of bar-surface points held by the point-cloud map, the same fraction
    without the background wall (ablation), and a resolution sweep. With
    `export_dir` set, the main-resolution grid and the point-cloud map are
    written there for plotting.
    """
    if scenario.compare is None:
        raise ValueError("scenario has no 'compare' section")
    comp = scenario.compare
    n_frames = comp.frames if frames is None else frames
    sensor = scenario.sensor
    bar = scenario.obstacle_by_name(comp.bar)
    wall = scenario.obstacle_by_name(comp.wall)
    pose_p = scenario.start_position
    R = yaw_rotation(scenario.start_yaw)

    def run_grid(resolution: float, obstacles: list) -> tuple:
        env = Environment(obstacles)
        grid = OccupancyGrid(
            GridConfig(resolution=resolution, origin=comp.origin, size=comp.size)
        )
        rng = np.random.default_rng(scenario.seed)
        cell_time = []
        for k in range(n_frames):
            t = k * sensor.frame_dt
            scan = generate_scan(env, sensor, pose_p, R, t, rng, frame_index=k)
            st = grid.integrate_scan(pose_p, scan)
            cell_time.append((st.traversed_cells, st.seconds))
        t_end = (n_frames - 1) * sensor.frame_dt
        cells = bar_cells(grid, bar, t_end)
        occ = grid.occupied_mask()
        occupied = sum(1 for c in cells if occ[c])
        fraction = occupied / len(cells) if cells else 0.0
        return fraction, grid, cell_time

    full = list(scenario.obstacles)
    no_wall = [ob for ob in full if ob.name != wall.name]

    main_fraction, main_grid, _ = run_grid(comp.grid_resolution, full)
    no_wall_fraction, _, _ = run_grid(comp.grid_resolution, no_wall)
    sweep = {}
    for res in comp.sweep:
        f, _, _ = run_grid(res, full)
        sweep[res] = f

    # point-cloud side: same scans through the temporal local map
    env = Environment(full)
    local_map = TemporalLocalMap(scenario.map_config)
    rng = np.random.default_rng(scenario.seed)
    for k in range(n_frames):
        t = k * sensor.frame_dt
        local_map.update(generate_scan(env, sensor, pose_p, R, t, rng, frame_index=k))
    t_end = (n_frames - 1) * sensor.frame_dt
    tol = 3.0 * sensor.range_noise_sigma + scenario.map_config.resolution * math.sqrt(3) / 2
    union = np.concatenate([tree.points for tree in local_map.trees if tree.size])
    bar_points = int((np.abs(bar.distances(union, t_end)) <= tol).sum()) if len(union) else 0

    if export_dir is not None:
        os.makedirs(export_dir, exist_ok=True)
        export_grid_rows(main_grid, os.path.join(export_dir, "grid_occupancy.txt"))
        dump_map(local_map, os.path.join(export_dir, "pointcloud_map"))

    return {
        "frames": n_frames,
        "grid_resolution": comp.grid_resolution,
        "bar_cell_occupied_fraction": main_fraction,
        "pointcloud_bar_points": bar_points,
        "no_wall_occupied_fraction": no_wall_fraction,
        "resolution_sweep": {f"{res:g}": frac for res, frac in sweep.items()},
        "map_tree_sizes": local_map.tree_sizes,
    }
