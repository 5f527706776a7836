"""Kinodynamic A* over acceleration-discretized motion primitives.

Each node expansion integrates the 27 per-axis control combinations
{-a_max, 0, +a_max}^3 over one primitive duration, rejects primitives that
violate the velocity limit or pass within the safety clearance of any local
map point, and pushes the survivors. An analytic two-point boundary-value
expansion toward the goal is attempted whenever the search makes enough
progress, terminating early with an exact goal connection.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from functools import lru_cache
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    ConstantAccelSegment,
    KinodynamicLimits,
    QuinticSegment,
    Trajectory,
    UavState,
    sample_times,
)
from .spatial import TemporalLocalMap, check_trajectory


class PlannerError(Exception):
    pass


class StartInCollision(PlannerError):
    """The requested start state violates the clearance against the current map."""

    def __init__(self, distance: float, point):
        super().__init__(f"start state within {distance:.3f} m of a map point")
        self.distance = distance
        self.point = point


class PlanningFailed(PlannerError):
    """Search exhausted (expansion budget or open set) without reaching the goal."""

    def __init__(self, message: str, report: "SearchReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class PlannerConfig:
    limits: KinodynamicLimits = field(default_factory=KinodynamicLimits)
    clearance: float = 0.45
    goal_tolerance: float = 0.3
    prune_cell: float | None = None  # default: half the clearance
    time_weight: float = 1.0
    max_expansions: int = 20000
    velocity_bound: str = "per_axis"  # or "norm"
    plan_budget: float = 0.03  # replan handover horizon, seconds
    heuristic_weight: float = 5.0  # open-set ordering only; heuristic() stays admissible

    def __post_init__(self):
        if self.clearance <= 0 or self.goal_tolerance <= 0 or self.time_weight <= 0:
            raise ValueError("clearance, goal_tolerance and time_weight must be > 0")
        if self.prune_cell is not None and self.prune_cell <= 0:
            raise ValueError("prune_cell must be > 0")
        if self.max_expansions < 1:
            raise ValueError("max_expansions must be >= 1")
        if self.velocity_bound not in ("per_axis", "norm"):
            raise ValueError("velocity_bound must be 'per_axis' or 'norm'")
        if self.plan_budget < 0:
            raise ValueError("plan_budget must be >= 0")
        if self.heuristic_weight < 1.0:
            raise ValueError("heuristic_weight must be >= 1")

    @property
    def effective_prune_cell(self) -> float:
        return self.prune_cell if self.prune_cell is not None else 0.5 * self.clearance

    @property
    def check_dt(self) -> float:
        # No sample gap exceeds half the clearance at maximum speed.
        return self.clearance / (2.0 * self.limits.v_max)


@dataclass(slots=True)
class SearchNode:
    state: UavState
    g: float
    f: float
    parent: "SearchNode | None" = None
    control: np.ndarray | None = None  # incoming control


@dataclass
class SearchReport:
    outcome: str = "failed"
    expansions: int = 0
    open_size: int = 0
    closed_size: int = 0
    wall_seconds: float = 0.0
    analytic_connection: bool = False
    cost: float = math.nan
    primitive_count: int = 0

    def as_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "expansions": self.expansions,
            "open_size": self.open_size,
            "closed_size": self.closed_size,
            "wall_seconds": self.wall_seconds,
            "analytic_connection": self.analytic_connection,
            "cost": self.cost,
            "primitive_count": self.primitive_count,
        }


@lru_cache(maxsize=16)
def _control_set_cached(a_max: float):
    axis = (-a_max, 0.0, a_max)
    u = np.array(list(itertools.product(axis, axis, axis)))
    u.setflags(write=False)
    return u


def control_set(a_max: float) -> np.ndarray:
    """All 27 per-axis control combinations, in a fixed deterministic order."""
    return _control_set_cached(float(a_max))


@lru_cache(maxsize=64)
def _sample_grid_cached(tau: float, dt: float):
    ts = sample_times(0.0, tau, dt)
    ts.setflags(write=False)
    return ts


@lru_cache(maxsize=16)
def _edge_costs_cached(a_max: float, tau: float, rho: float):
    U = control_set(a_max)
    costs = ((U * U).sum(axis=1) + rho) * tau
    costs.setflags(write=False)
    return costs


def heuristic(state: UavState, goal, cfg: PlannerConfig) -> float:
    """Admissible time lower bound scaled by the time weight."""
    d = float(np.linalg.norm(state.p - np.asarray(goal, dtype=float)))
    return cfg.time_weight * d / cfg.limits.v_max


def edge_cost(u: np.ndarray, tau: float, cfg: PlannerConfig) -> float:
    """Control effort plus weighted time for one primitive."""
    return (float(np.dot(u, u)) + cfg.time_weight) * tau


def _velocity_ok(V: np.ndarray, cfg: PlannerConfig) -> np.ndarray:
    """Velocity-limit mask over the leading axes of V (..., samples, 3)."""
    v_max = cfg.limits.v_max
    if cfg.velocity_bound == "per_axis":
        ok = (np.abs(V) <= v_max).all(axis=-1)
    else:
        ok = np.linalg.norm(V, axis=-1) <= v_max
    return ok.all(axis=-1)


def expand(node: SearchNode, cfg: PlannerConfig, local_map: TemporalLocalMap, goal=None) -> list[SearchNode]:
    """All feasible children of `node` under the 27 motion primitives.

    A primitive survives if every sampled velocity respects the configured
    velocity bound and no sampled position lies within the clearance of any
    map point. Children are returned in control order.
    """
    limits = cfg.limits
    U = control_set(limits.a_max)
    tau = limits.primitive_duration
    ts = _sample_grid_cached(tau, cfg.check_dt)  # includes both endpoints
    p0, v0 = node.state.p, node.state.v

    # (27, T, 3) sampled positions and velocities under each control
    T = ts[None, :, None]
    P = p0 + v0 * T + 0.5 * U[:, None, :] * T * T
    V = v0 + U[:, None, :] * T

    ok = _velocity_ok(V, cfg)
    if ok.any():
        # the shared t=0 sample is the parent state, already known collision-free
        cand = np.nonzero(ok)[0]
        pts = P[cand, 1:, :].reshape(-1, 3)
        hits = local_map.any_within(pts, cfg.clearance).reshape(len(cand), -1)
        ok[cand] &= ~hits.any(axis=1)

    surv = np.nonzero(ok)[0]
    if len(surv) == 0:
        return []
    P_end = P[surv, -1]
    V_end = V[surv, -1]
    G = node.g + _edge_costs_cached(limits.a_max, tau, cfg.time_weight)[surv]
    if goal is None:
        F = G
    else:
        h = np.linalg.norm(P_end - np.asarray(goal, dtype=float), axis=1) * (
            cfg.time_weight / limits.v_max
        )
        F = G + cfg.heuristic_weight * h
    t_child = node.state.t + tau
    children = []
    for j, i in enumerate(surv):
        child_state = UavState._unchecked(t_child, P_end[j], V_end[j], U[i].copy())
        children.append(
            SearchNode(state=child_state, g=float(G[j]), f=float(F[j]), parent=node, control=U[i])
        )
    return children


def analytic_expansion(
    state: UavState, goal, cfg: PlannerConfig, local_map: TemporalLocalMap
) -> QuinticSegment | None:
    """Attempt a direct quintic connection from `state` to rest at the goal.

    Tries a small set of candidate durations scaled from the straight-line
    time; returns the first candidate whose sampled path is collision-free
    and respects the velocity/acceleration limits, else None.
    """
    goal = np.asarray(goal, dtype=float)
    d = float(np.linalg.norm(goal - state.p))
    speed = float(np.linalg.norm(state.v))
    # straight-line time, with a braking-aware floor for near-goal attempts
    base = max(d / cfg.limits.v_max, speed / cfg.limits.a_max, cfg.check_dt)
    zero = np.zeros(3)
    for scale in (1.0, 1.5, 2.0):
        tau = scale * base
        seg = QuinticSegment.solve(state, goal, zero, zero, tau)
        # validate on a grid fine relative to the segment itself; short segments
        # would otherwise be sampled only at their endpoints
        ts = sample_times(0.0, tau, min(cfg.check_dt, tau / 8.0))
        P, V, A = seg.states_at(ts)
        if not _velocity_ok(V, cfg):
            continue
        if (np.abs(A) > cfg.limits.a_max + 1e-9).any():
            continue
        if local_map.any_within(P, cfg.clearance).any():
            continue
        return seg
    return None


def _segment_effort(seg: QuinticSegment, dt: float) -> float:
    """Trapezoidal integral of squared acceleration magnitude over the segment."""
    ts = sample_times(0.0, seg.duration, dt)
    _, _, A = seg.states_at(ts)
    return float(np.trapezoid((A * A).sum(axis=1), ts))


def _build_trajectory(node: SearchNode, start: UavState, tail: QuinticSegment | None, cfg: PlannerConfig):
    chain = []
    cur = node
    while cur.parent is not None:
        chain.append(cur.control)
        cur = cur.parent
    chain.reverse()
    segments = []
    state = start
    tau = cfg.limits.primitive_duration
    for u in chain:
        seg = ConstantAccelSegment(start=state, u=u, tau=tau)
        segments.append(seg)
        state = seg.end_state
    cost = node.g
    if tail is not None:
        segments.append(tail)
        cost += cfg.time_weight * tail.duration + _segment_effort(tail, cfg.check_dt)
    return Trajectory(segments=tuple(segments), t0=start.t), cost, len(chain)


def _prune_key(p: np.ndarray, cell: float) -> tuple:
    return (math.floor(p[0] / cell), math.floor(p[1] / cell), math.floor(p[2] / cell))


def plan(start: UavState, goal, cfg: PlannerConfig, local_map: TemporalLocalMap):
    """Search a dynamically feasible, collision-free trajectory from `start`
    to within the goal tolerance. Returns (trajectory, report).

    Raises StartInCollision if the start state already violates the clearance,
    PlanningFailed if the expansion budget or the open set is exhausted.
    """
    t_wall = time.perf_counter()
    goal = np.asarray(goal, dtype=float)
    collides, pt, dist = local_map.collision(start.p, cfg.clearance)
    if collides:
        raise StartInCollision(dist, pt)

    cell = cfg.effective_prune_cell
    h0 = cfg.heuristic_weight * heuristic(start, goal, cfg)
    root = SearchNode(state=start, g=0.0, f=h0)
    counter = itertools.count()
    open_heap: list = [(root.f, h0, next(counter), root)]
    closed: dict[tuple, float] = {}
    report = SearchReport()
    ae_last_d = math.inf

    def finish(node: SearchNode, tail: QuinticSegment | None, outcome: str):
        traj, cost, n_prim = _build_trajectory(node, start, tail, cfg)
        report.outcome = outcome
        report.analytic_connection = tail is not None
        report.cost = cost
        report.primitive_count = n_prim
        report.open_size = len(open_heap)
        report.closed_size = len(closed)
        report.wall_seconds = time.perf_counter() - t_wall
        return traj, report

    while open_heap:
        _, _, _, node = heapq.heappop(open_heap)
        key = _prune_key(node.state.p, cell)
        best = closed.get(key)
        if best is not None and best <= node.g:
            continue
        closed[key] = node.g

        d = float(np.linalg.norm(node.state.p - goal))
        at_goal = d <= cfg.goal_tolerance
        if node is root or at_goal or ae_last_d - d >= 1.0:
            ae_last_d = d
            tail = analytic_expansion(node.state, goal, cfg, local_map)
            if tail is not None:
                return finish(node, tail, "analytic")
        if at_goal:
            return finish(node, None, "primitive")

        if report.expansions >= cfg.max_expansions:
            report.outcome = "expansion_budget_exhausted"
            report.open_size = len(open_heap)
            report.closed_size = len(closed)
            report.wall_seconds = time.perf_counter() - t_wall
            raise PlanningFailed(
                f"expansion budget {cfg.max_expansions} exhausted", report
            )
        report.expansions += 1
        for child in expand(node, cfg, local_map, goal=goal):
            ckey = _prune_key(child.state.p, cell)
            cbest = closed.get(ckey)
            if cbest is not None and cbest <= child.g:
                continue
            heapq.heappush(open_heap, (child.f, child.f - child.g, next(counter), child))

    report.outcome = "open_set_exhausted"
    report.closed_size = len(closed)
    report.wall_seconds = time.perf_counter() - t_wall
    raise PlanningFailed("open set exhausted before reaching the goal", report)


@dataclass
class ReplanDecision:
    action: str  # "keep" or "replaced"
    trajectory: Trajectory
    collision_time: float | None = None
    report: SearchReport | None = None


def replan_step(
    traj: Trajectory,
    tracking_time: float,
    local_map: TemporalLocalMap,
    cfg: PlannerConfig,
    goal,
) -> ReplanDecision:
    """One event-driven replanning step against a freshly updated map.

    Checks the remainder of the tracked trajectory; if it stays clear the
    current trajectory is kept and the planner is never invoked. Otherwise a
    new trajectory is planned from the state the UAV will occupy one planning
    budget ahead, so the handover is continuous. Planner failures propagate.
    """
    col_t = check_trajectory(local_map, traj, cfg.clearance, cfg.check_dt, t_from=tracking_time)
    if col_t is None:
        return ReplanDecision(action="keep", trajectory=traj)
    handover = min(tracking_time + cfg.plan_budget, traj.t_end)
    start = traj.state_at(handover)
    new_traj, report = plan(start, goal, cfg, local_map)
    return ReplanDecision(
        action="replaced", trajectory=new_traj, collision_time=col_t, report=report
    )


def relaxed_replan(start: UavState, goal, cfg: PlannerConfig, local_map: TemporalLocalMap,
                   floor: float = 0.10, step: float = 0.8):
    """Emergency fallback: retry planning with a progressively reduced clearance
    until the start state is feasible. Returns (trajectory, report, clearance_used).
    """
    clearance = cfg.clearance
    prune = cfg.effective_prune_cell  # keep the dedup grid fixed while relaxing
    while True:
        relaxed = replace(cfg, clearance=clearance, prune_cell=prune)
        try:
            traj, report = plan(start, goal, relaxed, local_map)
            return traj, report, clearance
        except StartInCollision:
            if clearance <= floor:
                raise
            clearance = max(floor, clearance * step)
