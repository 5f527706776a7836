"""Closed-loop flight simulation: scan, map update, event-driven replan, track.

The loop runs at the sensor frame rate with a fixed step. Each frame advances
the dynamic obstacles (schedules are functions of time), casts one lidar frame
from the UAV's current pose, feeds it to the temporal local map, runs one
replanning step, and moves the UAV one step along the tracked trajectory
(exact tracking). Identical scenario + seed gives an identical run log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import Trajectory, UavState, sample_times, voxel_keys
from .planner import (
    PlannerError,
    PlanningFailed,
    StartInCollision,
    plan,
    relaxed_replan,
    replan_step,
)
from .scenario import Scenario
from .sensor import Environment, disk_to_directions, generate_scan, yaw_rotation
from .spatial import TemporalLocalMap

# Sensed-space telemetry: coarse cells swept by a fixed probe-ray grid. Plans
# are allowed through unseen space; we only log how much of each plan is there.
_COVERAGE_CELL = 0.5
_COVERAGE_RANGE = 25.0
_COVERAGE_STEP = 0.25


@lru_cache(maxsize=8)
def _probe_disk_grid(n_rings: int = 4, per_ring: int = 14):
    u = [0.0]
    w = [0.0]
    for i in range(1, n_rings + 1):
        r = i / n_rings
        for j in range(per_ring):
            a = 2.0 * math.pi * (j + 0.5 * (i % 2)) / per_ring
            u.append(r * math.cos(a))
            w.append(r * math.sin(a))
    return np.array(u), np.array(w)


class _SensedSpace:
    """Approximate record of space covered by the sensor so far."""

    def __init__(self, sensor):
        u, w = _probe_disk_grid()
        self._dirs_sensor = disk_to_directions(u, w, sensor)
        self._steps = np.arange(_COVERAGE_STEP, _COVERAGE_RANGE + 1e-9, _COVERAGE_STEP)
        self._cells: set = set()

    def mark(self, env: Environment, position: np.ndarray, rotation: np.ndarray, t: float):
        dirs = self._dirs_sensor @ rotation.T
        hits = env.cast_rays(position, dirs, t, _COVERAGE_RANGE)
        reach = np.where(np.isfinite(hits), hits, _COVERAGE_RANGE)
        pts = position + dirs[:, None, :] * self._steps[None, :, None]
        keep = self._steps[None, :] <= reach[:, None] + _COVERAGE_STEP
        keys = voxel_keys(pts[keep], _COVERAGE_CELL)
        self._cells.update(np.unique(keys).tolist())

    def unseen_count(self, traj: Trajectory, dt: float) -> int:
        ts = sample_times(traj.t0, traj.duration, dt)
        P, _, _ = traj.states_at(ts)
        keys = voxel_keys(P, _COVERAGE_CELL)
        return int(sum(1 for k in np.unique(keys).tolist() if k not in self._cells))


@dataclass
class FrameRecord:
    index: int
    t: float
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    scan_size: int
    tree_sizes: list
    flag: str = ""


@dataclass
class SimEvent:
    t: float
    kind: str
    data: dict = field(default_factory=dict)


@dataclass
class RunLog:
    scenario_name: str
    seed: int
    outcome: str = "timeout"
    final_time: float = 0.0
    replan_count: int = 0
    frames: list = field(default_factory=list)
    events: list = field(default_factory=list)
    map_update_seconds: list = field(default_factory=list)
    tree_build_seconds: list = field(default_factory=list)
    plan_seconds: list = field(default_factory=list)
    local_map: TemporalLocalMap | None = None
    env: Environment | None = None

    def path_length(self) -> float:
        P = np.array([fr.p for fr in self.frames])
        if len(P) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(P, axis=0), axis=1).sum())


class _TrackingState:
    """Current + pending trajectory bookkeeping with hover fallbacks."""

    def __init__(self, start: UavState):
        self.current: Trajectory | None = None
        self.pending: Trajectory | None = None
        self.hover_p = start.p

    def promote(self, t: float):
        if self.pending is not None and t >= self.pending.t0 - 1e-9:
            self.current = self.pending
            self.pending = None

    def active(self) -> Trajectory | None:
        return self.pending if self.pending is not None else self.current

    def state_at(self, t: float) -> UavState:
        src = self.current
        if self.pending is not None and t >= self.pending.t0 - 1e-9:
            src = self.pending
        if src is None or t < src.t0 - 1e-9:
            return UavState.hover(self.hover_p, t=t)
        if t >= src.t_end:
            end = src.end_state
            self.hover_p = end.p
            return UavState.hover(end.p, t=t)
        st = src.state_at(t)
        self.hover_p = st.p
        return st


def _handover_time(t: float, budget: float, frame_dt: float) -> float:
    """Next frame-aligned time at least one planning budget ahead."""
    return t + math.ceil(max(budget, 0.0) / frame_dt - 1e-9) * frame_dt


def simulate(scenario: Scenario, seed: int | None = None) -> RunLog:
    seed = scenario.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    env = scenario.environment()
    local_map = TemporalLocalMap(scenario.map_config)
    cfg = scenario.planner_config
    sensor = scenario.sensor
    goal = scenario.goal
    dt = sensor.frame_dt
    n_frames = int(round(scenario.duration / dt))

    log = RunLog(scenario_name=scenario.name, seed=seed, local_map=local_map, env=env)
    uav = UavState.hover(scenario.start_position, t=0.0)
    yaw = scenario.start_yaw
    tracking = _TrackingState(uav)
    sensed = _SensedSpace(sensor)

    def record(k: int, state: UavState, scan_size: int, flag: str):
        log.frames.append(
            FrameRecord(
                index=k,
                t=state.t,
                p=state.p.copy(),
                v=state.v.copy(),
                a=state.a.copy(),
                scan_size=scan_size,
                tree_sizes=list(local_map.tree_sizes),
                flag=flag,
            )
        )

    for k in range(n_frames):
        t = k * dt
        tracking.promote(t)
        flag = ""

        speed_xy = math.hypot(uav.v[0], uav.v[1])
        if speed_xy > 0.05:
            yaw = math.atan2(uav.v[1], uav.v[0])
        rotation = yaw_rotation(yaw)
        scan = generate_scan(env, sensor, uav.p, rotation, t, rng, frame_index=k)
        sensed.mark(env, uav.p, rotation, t)
        info = local_map.update(scan)
        log.map_update_seconds.append(info.total_seconds)
        log.tree_build_seconds.append(info.build_seconds)
        if info.wrapped:
            log.events.append(
                SimEvent(t=t, kind="map_wraparound", data={"tree_sizes": list(local_map.tree_sizes)})
            )

        try:
            active = tracking.active()
            if active is None:
                t0 = _handover_time(t, cfg.plan_budget, dt)
                traj, report = plan(UavState.hover(uav.p, t=t0), goal, cfg, local_map)
                tracking.pending = traj
                log.plan_seconds.append(report.wall_seconds)
                log.events.append(
                    SimEvent(
                        t=t,
                        kind="plan",
                        data={
                            "expansions": report.expansions,
                            "cost": round(report.cost, 9),
                            "analytic": report.analytic_connection,
                            "unseen_cells": sensed.unseen_count(traj, cfg.check_dt),
                        },
                    )
                )
                flag = "plan"
            else:
                decision = replan_step(active, max(t, active.t0), local_map, cfg, goal)
                if decision.action == "replaced":
                    tracking.pending = decision.trajectory
                    log.replan_count += 1
                    log.plan_seconds.append(decision.report.wall_seconds)
                    log.events.append(
                        SimEvent(
                            t=t,
                            kind="replan",
                            data={
                                "collision_time": round(decision.collision_time, 9),
                                "expansions": decision.report.expansions,
                                "cost": round(decision.report.cost, 9),
                                "analytic": decision.report.analytic_connection,
                                "unseen_cells": sensed.unseen_count(
                                    decision.trajectory, cfg.check_dt
                                ),
                            },
                        )
                    )
                    flag = "replan"
        except StartInCollision:
            # Replan start state already violates the clearance (obstacle swept
            # onto the UAV): relax the clearance stepwise to escape.
            try:
                active = tracking.active()
                handover = _handover_time(t, cfg.plan_budget, dt)
                if active is not None:
                    start = active.state_at(min(max(handover, active.t0), active.t_end))
                else:
                    start = UavState.hover(uav.p, t=handover)
                traj, report, used = relaxed_replan(start, goal, cfg, local_map)
                tracking.pending = traj
                log.replan_count += 1
                log.plan_seconds.append(report.wall_seconds)
                log.events.append(
                    SimEvent(
                        t=t,
                        kind="emergency_relax",
                        data={"clearance": round(used, 9), "expansions": report.expansions},
                    )
                )
                flag = "emergency_relax"
            except PlannerError as e:
                log.outcome = "planner_failure"
                log.events.append(SimEvent(t=t, kind="planner_failure", data={"reason": str(e)}))
                record(k, uav, len(scan), "planner_failure")
                log.final_time = t
                return log
        except PlanningFailed as e:
            log.outcome = "planner_failure"
            log.events.append(SimEvent(t=t, kind="planner_failure", data={"reason": str(e)}))
            record(k, uav, len(scan), "planner_failure")
            log.final_time = t
            return log

        record(k, uav, len(scan), flag)

        t_next = (k + 1) * dt
        uav = tracking.state_at(t_next)

        if np.linalg.norm(uav.p - goal) <= cfg.goal_tolerance:
            log.outcome = "goal_reached"
            record(k + 1, uav, 0, "goal_reached")
            log.final_time = t_next
            return log
        if env.min_distance(uav.p, t_next) <= 0.0:
            log.outcome = "collision"
            record(k + 1, uav, 0, "collision")
            log.final_time = t_next
            return log

    log.outcome = "timeout"
    log.final_time = n_frames * dt
    record(n_frames, uav, 0, "timeout")
    return log


@dataclass
class AuditResult:
    min_distance: float
    min_distance_active: float
    per_obstacle: dict

    @property
    def interpenetration(self) -> bool:
        return self.min_distance < 0.0


def audit_ground_truth(log: RunLog, scenario: Scenario) -> AuditResult:
    """Post-run safety audit against the analytic obstacle geometry.

    Independent of the map: every logged UAV position is checked against the
    obstacles at the matching time. Frames flagged as planner-failure hover are
    excluded from the 'active' minimum but still count for interpenetration.
    """
    env = scenario.environment()
    P = np.array([fr.p for fr in log.frames])
    T = np.array([fr.t for fr in log.frames])
    active = np.array([fr.flag != "planner_failure" for fr in log.frames])
    d = env.min_distances_over_time(P, T)
    per_obstacle = {
        ob.name: float(ob.distances(P, T).min()) for ob in env.obstacles if ob.name
    }
    min_active = float(d[active].min()) if active.any() else math.inf
    return AuditResult(
        min_distance=float(d.min()) if len(d) else math.inf,
        min_distance_active=min_active,
        per_obstacle=per_obstacle,
    )
