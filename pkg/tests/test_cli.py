import json
import os

import pytest
import yaml

from cloudnav.cli import (
    BUNDLED_SCENARIOS,
    EXIT_OK,
    EXIT_SCENARIO_ERROR,
    bench,
    format_bench_table,
    main,
    resolve_scenario_path,
    run,
)
from cloudnav.scenario import ScenarioError

MINI = {
    "name": "mini_cli",
    "duration": 30.0,
    "seed": 2,
    "goal": [8.0, 0.0, 1.0],
    "start": {"position": [0.0, 0.0, 1.0]},
    "sensor": {"points_per_second": 50000, "frame_rate": 50.0},
    "map": {"scans_per_tree": 25, "tree_count": 2, "resolution": 0.1, "clearance": 0.45},
    "obstacles": [
        {"name": "pillar", "shape": "capsule", "p0": [4.0, 0.3, -1.0], "p1": [4.0, 0.3, 3.0], "radius": 0.15},
    ],
}


@pytest.fixture()
def mini_path(tmp_path):
    path = tmp_path / "mini.yaml"
    path.write_text(yaml.safe_dump(MINI))
    return str(path)


def test_resolve_bundled_names_exist():
    for name in BUNDLED_SCENARIOS:
        path = resolve_scenario_path(name)
        assert os.path.exists(path)
    with pytest.raises(ScenarioError):
        resolve_scenario_path("no_such_scenario")


def test_run_writes_expected_outputs(mini_path, tmp_path):
    out = tmp_path / "out"
    report = run(mini_path, seed=None, out_dir=out)
    assert report.outcome == "goal_reached"
    for name in ("trajectory.csv", "events.csv", "report.json", "map_final/tree0.txt",
                 "map_final/tree1.txt", "map_final/counters.txt"):
        assert (out / name).exists(), name
    data = json.loads((out / "report.json").read_text())
    assert data["outcome"] == "goal_reached"
    assert data["timings"]["map_update"]["count"] > 0
    assert data["min_ground_truth_clearance"] > 0
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("frame,t,px,py,pz")


def test_run_is_byte_identical_for_same_seed(mini_path, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run(mini_path, seed=11, out_dir=a)
    run(mini_path, seed=11, out_dir=b)
    for name in ("trajectory.csv", "events.csv", "map_final/tree0.txt",
                 "map_final/tree1.txt", "map_final/counters.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_run_differs_across_seeds(mini_path, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run(mini_path, seed=1, out_dir=a)
    run(mini_path, seed=2, out_dir=b)
    assert (a / "trajectory.csv").read_bytes() != (b / "trajectory.csv").read_bytes()


def test_malformed_scenario_no_partial_outputs(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("duration: -5\ngoal: [1, 2]\n")
    out = tmp_path / "out"
    with pytest.raises(ScenarioError):
        run(str(bad), seed=None, out_dir=out)
    assert not out.exists()


def test_cli_main_exit_codes(mini_path, tmp_path):
    assert main([mini_path, "--out", str(tmp_path / "ok")]) == EXIT_OK
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense: [\n")
    assert main([str(bad), "--out", str(tmp_path / "x")]) == EXIT_SCENARIO_ERROR
    assert main(["missing_scenario", "--out", str(tmp_path / "y")]) == EXIT_SCENARIO_ERROR


def test_cli_override_flag(mini_path, tmp_path, capsys):
    base = run(mini_path, seed=4, out_dir=tmp_path / "base")
    # a_max must stay above 2*prune_cell/primitive_duration^2 so the first hop
    # from rest clears the dedup cell (see README planner notes)
    code = main([mini_path, "--out", str(tmp_path / "o"),
                 "--set", "planner.a_max=1.6", "--seed", "4"])
    assert code == EXIT_OK
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["seed"] == 4
    # weaker acceleration: the flight takes longer than the default-config run
    assert report["flight_duration"] > base.flight_duration


def test_bench_single_repetition(mini_path):
    rows, reports = bench(mini_path, repetitions=1)
    stages = dict(rows)
    assert set(stages) == {"map_update", "tree_build", "plan"}
    assert stages["map_update"]["count"] > 0
    assert stages["plan"]["count"] >= 1
    table = format_bench_table(rows)
    assert table.splitlines()[0].startswith("stage\tcount")
    assert len(table.splitlines()) == 4
    assert len(reports) == 1


def test_bench_rejects_zero_repetitions(mini_path):
    with pytest.raises(ValueError):
        bench(mini_path, repetitions=0)


def test_cli_compare_maps(tmp_path, capsys):
    mini_cmp = {
        "name": "mini_cmp",
        "duration": 1.0,
        "seed": 3,
        "goal": [4.0, 0.0, 1.0],
        "start": {"position": [0.0, 0.0, 1.0], "yaw": 0.0},
        "sensor": {"points_per_second": 60000, "frame_rate": 50.0},
        "obstacles": [
            {"name": "bar", "shape": "capsule", "p0": [3.0, 0.0, 0.2], "p1": [3.0, 0.0, 2.2], "radius": 0.01},
            {"name": "wall", "shape": "box", "lo": [5.0, -3.8, -0.6], "hi": [5.3, 3.8, 4.6]},
        ],
        "compare": {"frames": 6, "grid_resolution": 0.3, "sweep": [0.3],
                    "origin": [2.0, -1.5, -0.5], "size": [2.1, 3.0, 3.6]},
    }
    path = tmp_path / "cmp.yaml"
    path.write_text(yaml.safe_dump(mini_cmp))
    code = main([str(path), "--compare-maps", "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    report = json.loads((tmp_path / "out" / "compare_maps.json").read_text())
    assert "bar_cell_occupied_fraction" in report
    assert report["pointcloud_bar_points"] > 0
    rows = (tmp_path / "out" / "grid_occupancy.txt").read_text().splitlines()
    assert rows[0] == "i j k probability" and len(rows) > 1
    assert (tmp_path / "out" / "pointcloud_map" / "tree0.txt").exists()
