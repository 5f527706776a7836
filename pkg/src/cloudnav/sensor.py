"""Synthetic forward-looking lidar over an analytic obstacle environment.

Obstacles are spheres, capsules (thin bars and branches) and axis-aligned
boxes, optionally translated over time by a piecewise-linear schedule. Scans
are produced by closed-form ray casting along either a Risley-style rosette
sweep or uniform random directions inside the elliptical field of view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import PointCloud

_EPS = 1e-12


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("radius must be > 0")

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origin - self.center
        b = dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - c
        t = np.full(len(dirs), np.inf)
        m = disc >= 0
        if m.any():
            sq = np.sqrt(disc[m])
            t0 = -b[m] - sq
            t1 = -b[m] + sq
            tm = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
            t[m] = tm
        return t

    def distances(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(pts - self.center, axis=-1) - self.radius


@dataclass(frozen=True)
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        if np.allclose(self.p0, self.p1):
            raise ValueError("capsule endpoints must differ")

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        # Infinite cylinder around the axis, then clip to the segment span and
        # fall back to the cap spheres.
        axis = self.p1 - self.p0
        L = np.linalg.norm(axis)
        a_hat = axis / L
        oc = origin - self.p0
        d_perp = dirs - np.outer(dirs @ a_hat, a_hat)
        o_perp = oc - (oc @ a_hat) * a_hat
        A = (d_perp * d_perp).sum(axis=1)
        B = d_perp @ o_perp
        C = o_perp @ o_perp - self.radius**2
        t = np.full(len(dirs), np.inf)
        m = A > _EPS
        disc = np.where(m, B * B - A * C, -1.0)
        hm = disc >= 0
        if hm.any():
            sq = np.sqrt(disc[hm])
            Ah = A[hm]
            t0 = (-B[hm] - sq) / Ah
            t1 = (-B[hm] + sq) / Ah
            tc = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
            # axial coordinate of the cylinder hit must fall inside the segment
            # (misses carry tc=inf; the nan they produce here fails the check)
            with np.errstate(invalid="ignore"):
                s = (oc @ a_hat) + tc * (dirs[hm] @ a_hat)
                tc = np.where((s >= 0) & (s <= L), tc, np.inf)
            t[hm] = tc
        for cap_center in (self.p0, self.p1):
            ts = Sphere(cap_center, self.radius).ray_hits(origin, dirs)
            t = np.minimum(t, ts)
        return t

    def distances(self, pts: np.ndarray) -> np.ndarray:
        axis = self.p1 - self.p0
        denom = axis @ axis
        u = np.clip((pts - self.p0) @ axis / denom, 0.0, 1.0)
        closest = self.p0 + u[..., None] * axis
        return np.linalg.norm(pts - closest, axis=-1) - self.radius


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if not np.all(self.hi > self.lo):
            raise ValueError("box must have hi > lo on every axis")

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (self.lo - origin) * inv
            t2 = (self.hi - origin) * inv
        # rays parallel to a slab: inside -> +-inf handled by min/max, outside -> miss
        parallel = np.abs(dirs) < _EPS
        inside = (origin >= self.lo) & (origin <= self.hi)
        lows = np.minimum(t1, t2)
        highs = np.maximum(t1, t2)
        lows = np.where(parallel, np.where(inside, -np.inf, np.inf), lows)
        highs = np.where(parallel, np.where(inside, np.inf, -np.inf), highs)
        t_near = lows.max(axis=1)
        t_far = highs.min(axis=1)
        t = np.where((t_near <= t_far) & (t_near > _EPS), t_near, np.inf)
        exit_hit = (t_near <= t_far) & (t_near <= _EPS) & (t_far > _EPS)
        t = np.where(exit_hit, t_far, t)
        return t

    def distances(self, pts: np.ndarray) -> np.ndarray:
        center = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        q = np.abs(pts - center) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class MotionSchedule:
    """Piecewise-linear translation offsets over time, clamped at both ends."""

    times: np.ndarray
    offsets: np.ndarray  # (K, 3)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        o = np.asarray(self.offsets, dtype=float)
        if t.ndim != 1 or o.shape != (len(t), 3) or len(t) == 0:
            raise ValueError("schedule needs matching times (K,) and offsets (K, 3)")
        if np.any(np.diff(t) <= 0) and len(t) > 1:
            raise ValueError("schedule times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "offsets", o)

    def offset_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.stack(
            [np.interp(t, self.times, self.offsets[:, k]) for k in range(3)], axis=-1
        )
        return out


@dataclass(frozen=True)
class Obstacle:
    shape: object  # Sphere | Capsule | Box
    schedule: MotionSchedule | None = None
    name: str = ""

    def offset_at(self, t):
        if self.schedule is None:
            return np.zeros(3) if np.isscalar(t) else np.zeros((len(np.atleast_1d(t)), 3))
        return self.schedule.offset_at(t)

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray, t: float) -> np.ndarray:
        off = self.offset_at(float(t))
        return self.shape.ray_hits(origin - off, dirs)

    def distances(self, pts: np.ndarray, t) -> np.ndarray:
        """Signed distance to the solid at time(s) t; pts (M,3), t scalar or (M,)."""
        off = self.offset_at(t)
        return self.shape.distances(pts - off)


class Environment:
    """Collection of (possibly moving) analytic obstacles."""

    def __init__(self, obstacles: list[Obstacle]):
        self.obstacles = list(obstacles)

    def cast_rays(self, origin, dirs: np.ndarray, t: float, max_range: float) -> np.ndarray:
        origin = np.asarray(origin, dtype=float)
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        best = np.full(len(dirs), np.inf)
        for ob in self.obstacles:
            best = np.minimum(best, ob.ray_hits(origin, dirs, t))
        best[best > max_range] = np.inf
        return best

    def cast_ray(self, origin, direction, t: float, max_range: float):
        """Nearest hit point of a single ray, or None."""
        d = np.asarray(direction, dtype=float)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("direction must be a unit vector")
        th = self.cast_rays(origin, d[None, :], t, max_range)[0]
        if not np.isfinite(th):
            return None
        return np.asarray(origin, dtype=float) + th * d

    def min_distance(self, p, t: float) -> float:
        """Smallest signed distance from p to any obstacle at time t."""
        p = np.asarray(p, dtype=float)
        if not self.obstacles:
            return math.inf
        return float(min(ob.distances(p[None, :], float(t))[0] for ob in self.obstacles))

    def min_distances_over_time(self, pts: np.ndarray, ts: np.ndarray) -> np.ndarray:
        """Per (pts[i], ts[i]) pair, the smallest signed distance to any obstacle."""
        pts = np.asarray(pts, dtype=float)
        ts = np.asarray(ts, dtype=float)
        if not self.obstacles:
            return np.full(len(pts), np.inf)
        d = np.full(len(pts), np.inf)
        for ob in self.obstacles:
            d = np.minimum(d, ob.distances(pts, ts))
        return d


@dataclass(frozen=True)
class SensorModel:
    fov_h_deg: float = 70.4
    fov_v_deg: float = 77.2
    points_per_second: float = 240000.0
    frame_rate: float = 50.0
    max_range: float = 450.0
    range_noise_sigma: float = 0.02
    pattern: str = "rosette"

    def __post_init__(self):
        if not (0 < self.fov_h_deg <= 180 and 0 < self.fov_v_deg <= 180):
            raise ValueError("FoV must be in (0, 180] degrees")
        if self.points_per_second <= 0 or self.frame_rate <= 0:
            raise ValueError("rates must be > 0")
        if self.max_range <= 0 or self.range_noise_sigma < 0:
            raise ValueError("max_range must be > 0 and noise sigma >= 0")
        if self.pattern not in ("rosette", "uniform"):
            raise ValueError("pattern must be 'rosette' or 'uniform'")

    @property
    def points_per_frame(self) -> int:
        return int(round(self.points_per_second / self.frame_rate))

    @property
    def frame_dt(self) -> float:
        return 1.0 / self.frame_rate


# Risley-style counter-rotating sweep rates (Hz). The irrational-looking ratio
# keeps consecutive frames from revisiting the same directions.
_ROSETTE_RATE_1 = 128.3
_ROSETTE_RATE_2 = 128.3 * 1.6180339887498949


def disk_to_directions(u: np.ndarray, w: np.ndarray, sensor: SensorModel) -> np.ndarray:
    """Map unit-disk coordinates to unit direction vectors in the sensor frame
    (x forward, y left, z up) filling the elliptical FoV."""
    th_h = u * math.radians(sensor.fov_h_deg) / 2.0
    th_v = w * math.radians(sensor.fov_v_deg) / 2.0
    cv = np.cos(th_v)
    return np.column_stack([cv * np.cos(th_h), cv * np.sin(th_h), np.sin(th_v)])


def rosette_directions(sensor: SensorModel, frame_index: int) -> np.ndarray:
    """Deterministic non-repetitive sweep: superposition of two counter-rotating
    angular components sampled at the point rate."""
    n = sensor.points_per_frame
    i = frame_index * n + np.arange(n)
    t = i / sensor.points_per_second
    a1 = 2.0 * math.pi * _ROSETTE_RATE_1 * t
    a2 = -2.0 * math.pi * _ROSETTE_RATE_2 * t
    u = 0.5 * (np.cos(a1) + np.cos(a2))
    w = 0.5 * (np.sin(a1) + np.sin(a2))
    return disk_to_directions(u, w, sensor)


def uniform_directions(sensor: SensorModel, rng: np.random.Generator) -> np.ndarray:
    n = sensor.points_per_frame
    r = np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    return disk_to_directions(r * np.cos(phi), r * np.sin(phi), sensor)


def yaw_rotation(yaw: float) -> np.ndarray:
    """World-from-sensor rotation for a level sensor with the given heading."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def generate_scan(
    env: Environment,
    sensor: SensorModel,
    position,
    rotation: np.ndarray,
    t: float,
    rng: np.random.Generator,
    frame_index: int | None = None,
) -> PointCloud:
    """One lidar frame: cast the frame's rays, apply range noise to the hits,
    drop the misses, and return world-frame points stamped with `t`.

    Range noise is clipped at three sigma so every returned point stays on an
    obstacle surface up to that bound (the sensor's false-alarm rate is modeled
    as zero). Deterministic for a fixed rng state and frame index.
    """
    position = np.asarray(position, dtype=float)
    if frame_index is None:
        frame_index = int(round(t * sensor.frame_rate))
    if sensor.pattern == "rosette":
        dirs_s = rosette_directions(sensor, frame_index)
    else:
        dirs_s = uniform_directions(sensor, rng)
    dirs_w = dirs_s @ rotation.T
    # draw noise for every ray regardless of hits to keep the stream aligned
    sigma = sensor.range_noise_sigma
    noise = np.clip(rng.normal(0.0, sigma, len(dirs_w)), -3.0 * sigma, 3.0 * sigma) if sigma > 0 else 0.0
    t_hit = env.cast_rays(position, dirs_w, t, sensor.max_range)
    mask = np.isfinite(t_hit)
    if not mask.any():
        return PointCloud.empty(stamp=t)
    ranges = np.maximum(t_hit[mask] + (noise[mask] if sigma > 0 else 0.0), 1e-9)
    pts = position + dirs_w[mask] * ranges[:, None]
    return PointCloud(points=pts, stamp=t)
