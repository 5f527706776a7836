"""KD-trees over point clouds and the dual time-accumulated local map.

The local map cycles a fixed number of KD-trees: each tree holds the
voxel-filtered accumulation of up to `scans_per_tree` consecutive scans, so
together the trees cover a bounded window of recent sensor history and space
vacated by moving obstacles becomes free again once the window rolls past.
Collision checks always consult every tree.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import PointCloud, Trajectory, sample_times, save_cloud_txt, voxel_filter


class KdTree:
    """Balanced 3-d tree with exact nearest / radius queries.

    Backed by scipy's cKDTree; this wrapper adds empty-set handling, inclusive
    radius semantics (distance <= r), and deterministic tie-breaking by lowest
    insertion index so query results match a brute-force scan exactly.
    """

    def __init__(self, points: np.ndarray | None = None):
        pts = np.empty((0, 3)) if points is None else np.asarray(points, dtype=float)
        if pts.size == 0:
            pts = np.empty((0, 3))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        self._points = pts
        self._kd = cKDTree(pts) if len(pts) else None

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def size(self) -> int:
        return len(self._points)

    def nearest_within(self, q, r: float):
        """Closest stored point with distance <= r, or None.

        Ties are broken by lowest insertion index.
        """
        if r <= 0:
            raise ValueError("r must be > 0")
        if self._kd is None:
            return None
        idx = self._kd.query_ball_point(np.asarray(q, dtype=float), r)
        if not idx:
            return None
        idx = np.sort(np.asarray(idx))
        d = np.linalg.norm(self._points[idx] - np.asarray(q, dtype=float), axis=1)
        best = idx[np.argmin(d)]  # argmin returns the first minimum: lowest index
        return self._points[best].copy(), float(np.min(d))

    def min_distances(self, pts: np.ndarray, cap: float) -> np.ndarray:
        """Distance to the nearest stored point for each query, inf beyond `cap`."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self._kd is None:
            return np.full(len(pts), np.inf)
        # cKDTree's bound is exclusive; pad it so exact-boundary hits survive.
        d, _ = self._kd.query(pts, k=1, distance_upper_bound=cap + 1e-9)
        d = np.asarray(d, dtype=float)
        d[d > cap] = np.inf
        return d

    def any_within(self, pts: np.ndarray, r: float) -> np.ndarray:
        """Boolean per query point: is any stored point within distance r (inclusive)?"""
        return np.isfinite(self.min_distances(pts, r))


@dataclass(frozen=True)
class MapConfig:
    scans_per_tree: int = 50
    tree_count: int = 2
    resolution: float = 0.1
    clearance: float = 0.45
    scan_rate_hz: float = 50.0

    def __post_init__(self):
        if self.scans_per_tree < 1:
            raise ValueError("scans_per_tree must be >= 1")
        if self.tree_count < 2:
            raise ValueError("tree_count must be >= 2")
        if self.resolution <= 0 or self.clearance <= 0 or self.scan_rate_hz <= 0:
            raise ValueError("resolution, clearance and scan_rate_hz must be > 0")

    @property
    def accumulation_time(self) -> float:
        return self.scans_per_tree / self.scan_rate_hz


@dataclass
class MapUpdateInfo:
    tree_index: int
    wrapped: bool
    raw_accumulated: int
    filtered_size: int
    filter_seconds: float
    build_seconds: float
    total_seconds: float


class TemporalLocalMap:
    """Rolling local map of `tree_count` KD-trees fed by consecutive scans.

    Update rule per new scan: once every tree has received its quota of scans
    the counters reset and tree 0 is overwritten; otherwise the target tree is
    scan_input_num // scans_per_tree. A fresh accumulation starts whenever
    scan_input_num is a multiple of scans_per_tree; the accumulated raw points
    are voxel-filtered and the target tree is rebuilt from scratch.
    """

    def __init__(self, config: MapConfig):
        self.config = config
        self.scan_input_num = 0
        self.total_scans = 0
        self.trees: list[KdTree] = [KdTree() for _ in range(config.tree_count)]
        self._tree_clouds: list[PointCloud] = [PointCloud.empty() for _ in range(config.tree_count)]
        self._accum: list[PointCloud] = []

    def update(self, new_scan: PointCloud) -> MapUpdateInfo:
        cfg = self.config
        t_start = time.perf_counter()
        window = cfg.scans_per_tree * cfg.tree_count
        if self.scan_input_num >= window:  # kept for safety; counter wraps below
            self.scan_input_num = 0
        # the scan that starts a new cycle overwrites tree 0 wholesale
        wrapped = self.scan_input_num == 0 and self.total_scans > 0
        tree_index = self.scan_input_num // cfg.scans_per_tree
        if self.scan_input_num % cfg.scans_per_tree == 0:
            self._accum = [new_scan]
        else:
            self._accum.append(new_scan)
        raw = (
            np.concatenate([c.points for c in self._accum])
            if len(self._accum) > 1
            else self._accum[0].points
        )
        t_filter = time.perf_counter()
        filtered = voxel_filter(PointCloud(points=raw, stamp=new_scan.stamp), cfg.resolution)
        t_build = time.perf_counter()
        self.trees[tree_index] = KdTree(filtered.points)
        self._tree_clouds[tree_index] = filtered
        t_end = time.perf_counter()
        self.scan_input_num = (self.scan_input_num + 1) % window
        self.total_scans += 1
        return MapUpdateInfo(
            tree_index=tree_index,
            wrapped=wrapped,
            raw_accumulated=len(raw),
            filtered_size=len(filtered),
            filter_seconds=t_build - t_filter,
            build_seconds=t_end - t_build,
            total_seconds=t_end - t_start,
        )

    @property
    def tree_sizes(self) -> list[int]:
        return [t.size for t in self.trees]

    def tree_cloud(self, index: int) -> PointCloud:
        return self._tree_clouds[index]

    def min_distances(self, pts: np.ndarray, cap: float) -> np.ndarray:
        """Per query point, the smallest distance over all trees (inf beyond cap)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = np.full(len(pts), np.inf)
        for tree in self.trees:
            d = np.minimum(d, tree.min_distances(pts, cap))
        return d

    def any_within(self, pts: np.ndarray, r: float) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        hit = np.zeros(len(pts), dtype=bool)
        for tree in self.trees:
            miss = ~hit
            if not miss.any():
                break
            hit[miss] = tree.any_within(pts[miss], r)
        return hit

    def collision(self, q, clearance: float):
        """(collides, nearest hit point or None, distance). Checks every tree."""
        if clearance <= 0:
            raise ValueError("clearance must be > 0")
        best = None
        best_d = np.inf
        for tree in self.trees:
            res = tree.nearest_within(q, clearance)
            if res is not None and res[1] < best_d:
                best, best_d = res[0], res[1]
        if best is None:
            return False, None, np.inf
        return True, best, best_d


def check_trajectory(
    local_map: TemporalLocalMap,
    traj: Trajectory,
    clearance: float,
    dt: float,
    t_from: float | None = None,
):
    """First sample time at which the trajectory comes within `clearance` of any
    map point, or None if the sampled remainder is clear.

    Sampling starts at `t_from` (default: trajectory start), steps by `dt`, and
    always includes the exact end time.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    start = traj.t0 if t_from is None else max(t_from, traj.t0)
    remaining = traj.t_end - start
    if remaining <= 0:
        ts = np.array([traj.t_end])
    else:
        ts = sample_times(start, remaining, dt)
    P, _, _ = traj.states_at(ts)
    hits = local_map.any_within(P, clearance)
    if hits.any():
        return float(ts[int(np.argmax(hits))])
    return None


def dump_map(local_map: TemporalLocalMap, out_dir) -> None:
    """Per-tree cloud files in the columnar text format plus a counters line."""
    os.makedirs(out_dir, exist_ok=True)
    for i in range(local_map.config.tree_count):
        save_cloud_txt(local_map.tree_cloud(i), os.path.join(out_dir, f"tree{i}.txt"))
    sizes = " ".join(str(s) for s in local_map.tree_sizes)
    with open(os.path.join(out_dir, "counters.txt"), "w") as f:
        f.write(f"scan_input_num {local_map.scan_input_num}\n")
        f.write(f"total_scans {local_map.total_scans}\n")
        f.write(f"tree_sizes {sizes}\n")
