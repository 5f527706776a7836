"""Scenario runner, benchmark harness, and map-comparison driver.

Usage:
    cloudnav SCENARIO [--seed N] [--out DIR] [--set key=value ...]
    cloudnav SCENARIO --bench N [--out DIR]
    cloudnav SCENARIO --compare-maps [--out DIR]

SCENARIO is a YAML file path or the name of a bundled scenario
(indoor_bar, forest_branch, hillside, thin_bar_compare).

Exit codes: 0 goal reached / command succeeded, 2 ground-truth collision,
3 planner failure, 4 timeout, 5 scenario error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .gridmap import thin_object_experiment
from .scenario import Scenario, ScenarioError, load_scenario
from .sim import RunLog, audit_ground_truth, simulate
from .spatial import dump_map

EXIT_OK = 0
EXIT_COLLISION = 2
EXIT_PLANNER_FAILURE = 3
EXIT_TIMEOUT = 4
EXIT_SCENARIO_ERROR = 5

_OUTCOME_EXIT = {
    "goal_reached": EXIT_OK,
    "collision": EXIT_COLLISION,
    "planner_failure": EXIT_PLANNER_FAILURE,
    "timeout": EXIT_TIMEOUT,
}

BUNDLED_SCENARIOS = ("indoor_bar", "forest_branch", "hillside", "thin_bar_compare")


def resolve_scenario_path(spec: str) -> str:
    if os.path.exists(spec):
        return spec
    if spec in BUNDLED_SCENARIOS:
        ref = resources.files("cloudnav").joinpath(f"scenarios/{spec}.yaml")
        return str(ref)
    raise ScenarioError(
        f"scenario {spec!r} is neither a file nor a bundled scenario {BUNDLED_SCENARIOS}"
    )


@dataclass
class RunReport:
    outcome: str
    replan_count: int
    min_ground_truth_clearance: float
    path_length: float
    flight_duration: float
    frames: int
    seed: int
    scenario: str
    timings: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "replan_count": self.replan_count,
            "min_ground_truth_clearance": self.min_ground_truth_clearance,
            "path_length": self.path_length,
            "flight_duration": self.flight_duration,
            "frames": self.frames,
            "seed": self.seed,
            "scenario": self.scenario,
            "timings": self.timings,
        }


def _stats(samples) -> dict:
    if not samples:
        return {"count": 0}
    a = np.asarray(samples)
    return {
        "count": int(a.size),
        "min_ms": float(a.min() * 1e3),
        "mean_ms": float(a.mean() * 1e3),
        "p95_ms": float(np.percentile(a, 95) * 1e3),
        "max_ms": float(a.max() * 1e3),
    }


def build_report(log: RunLog, scenario: Scenario) -> RunReport:
    audit = audit_ground_truth(log, scenario)
    return RunReport(
        outcome=log.outcome,
        replan_count=log.replan_count,
        min_ground_truth_clearance=audit.min_distance,
        path_length=log.path_length(),
        flight_duration=log.final_time,
        frames=len(log.frames),
        seed=log.seed,
        scenario=log.scenario_name,
        timings={
            "map_update": _stats(log.map_update_seconds),
            "tree_build": _stats(log.tree_build_seconds),
            "plan": _stats(log.plan_seconds),
        },
    )


def _fmt(x: float) -> str:
    return f"{x:.9f}"


def write_trajectory_csv(log: RunLog, path) -> None:
    with open(path, "w") as f:
        f.write("frame,t,px,py,pz,vx,vy,vz,ax,ay,az,scan_points,tree_sizes,flag\n")
        for fr in log.frames:
            row = [str(fr.index), _fmt(fr.t)]
            row += [_fmt(v) for v in fr.p] + [_fmt(v) for v in fr.v] + [_fmt(v) for v in fr.a]
            row += [str(fr.scan_size), "|".join(str(s) for s in fr.tree_sizes), fr.flag]
            f.write(",".join(row) + "\n")


def write_events_csv(log: RunLog, path) -> None:
    with open(path, "w") as f:
        f.write("t,kind,data\n")
        for ev in log.events:
            data = json.dumps(ev.data, sort_keys=True)
            f.write(f"{_fmt(ev.t)},{ev.kind},{data}\n")


def run(scenario_path, seed: int | None, out_dir, overrides: list[str] | None = None) -> RunReport:
    """Execute one closed-loop run and write its artifacts to out_dir.

    trajectory.csv, events.csv and the final map dump are reproducible from
    (scenario, seed); report.json additionally holds wall-clock timings.
    """
    scenario = load_scenario(scenario_path, overrides=overrides)
    log = simulate(scenario, seed=seed)
    report = build_report(log, scenario)
    os.makedirs(out_dir, exist_ok=True)
    write_trajectory_csv(log, os.path.join(out_dir, "trajectory.csv"))
    write_events_csv(log, os.path.join(out_dir, "events.csv"))
    dump_map(log.local_map, os.path.join(out_dir, "map_final"))
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return report


def bench(scenario_path, repetitions: int, overrides: list[str] | None = None):
    """Run the scenario `repetitions` times and aggregate per-stage timings.

    Repetitions run sequentially for timing isolation. Returns (rows, reports)
    where rows is a list of (stage, stats) in table order.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    scenario = load_scenario(scenario_path, overrides=overrides)
    stages = {"map_update": [], "tree_build": [], "plan": []}
    reports = []
    for _ in range(repetitions):
        log = simulate(scenario)
        stages["map_update"].extend(log.map_update_seconds)
        stages["tree_build"].extend(log.tree_build_seconds)
        stages["plan"].extend(log.plan_seconds)
        reports.append(build_report(log, scenario))
    rows = [(stage, _stats(samples)) for stage, samples in stages.items()]
    return rows, reports


def format_bench_table(rows) -> str:
    header = "stage\tcount\tmin_ms\tmean_ms\tp95_ms\tmax_ms"
    lines = [header]
    for stage, st in rows:
        if st["count"] == 0:
            lines.append(f"{stage}\t0\t-\t-\t-\t-")
        else:
            lines.append(
                f"{stage}\t{st['count']}\t{st['min_ms']:.3f}\t{st['mean_ms']:.3f}"
                f"\t{st['p95_ms']:.3f}\t{st['max_ms']:.3f}"
            )
    return "\n".join(lines)


def compare_maps(scenario_path, out_dir=None, overrides: list[str] | None = None) -> dict:
    """Drive the thin-object occupancy-grid comparison and write its report
    plus grid/point-cloud exports for plotting."""
    scenario = load_scenario(scenario_path, overrides=overrides)
    report = thin_object_experiment(scenario, export_dir=out_dir)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "compare_maps.json"), "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cloudnav",
        description="Point-cloud navigation simulator: run scenarios, benchmark, compare maps.",
    )
    parser.add_argument("scenario", help="scenario YAML path or bundled scenario name")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a scenario key by dotted path, e.g. planner.v_max=1.5",
    )
    parser.add_argument("--bench", type=int, metavar="N", help="run N timing repetitions")
    parser.add_argument(
        "--compare-maps", action="store_true", help="run the occupancy-grid comparison"
    )
    args = parser.parse_args(argv)

    try:
        path = resolve_scenario_path(args.scenario)
        if args.bench is not None:
            rows, reports = bench(path, args.bench, overrides=args.overrides)
            table = format_bench_table(rows)
            print(table)
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, "bench.tsv"), "w") as f:
                f.write(table + "\n")
            return EXIT_OK
        if args.compare_maps:
            report = compare_maps(path, out_dir=args.out, overrides=args.overrides)
            print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_OK
        report = run(path, args.seed, args.out, overrides=args.overrides)
        print(
            f"{report.scenario}: {report.outcome} in {report.flight_duration:.2f}s, "
            f"{report.replan_count} replans, path {report.path_length:.2f} m, "
            f"min clearance {report.min_ground_truth_clearance:.3f} m"
        )
        return _OUTCOME_EXIT.get(report.outcome, 1)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_SCENARIO_ERROR


if __name__ == "__main__":
    sys.exit(main())
