import copy
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from formation_mpc import (ConfigurationError, Metrics, TrajectoryLog,
                           compute_metrics, inner_loop, load_scenario,
                           read_trajectory_csv, riccati_terminal_weight,
                           run_scenario, scenario_findings,
                           write_trajectory_csv)
from formation_mpc.sim_harness import write_metrics_json
from formation_mpc.vehicle_models import ActuatorLimits, double_integrator_3d


def scenario_dict() -> dict:
    """Small three-ship hold at the formation slots; solves in milliseconds."""
    return {
        "vehicles": {"positions": [[0.0, 0.0, 0.0], [-5.0, 5.0, 0.0],
                                   [-5.0, -5.0, 0.0]],
                     "a_max": 5.0, "v_max": 20.0},
        "mpc": {"np": 4, "nu": 2, "nc": 4,
                "q": [1.0, 1.0, 1.0, 0.1, 0.1, 0.1], "r": 0.1,
                "solver_tol": 1e-6},
        "formation": {"mode": "virtual_structure",
                      "offsets": [[0.0, 0.0, 0.0], [-5.0, 5.0, 0.0],
                                  [-5.0, -5.0, 0.0]],
                      "d_min": 2.0},
        "path": {"waypoints": [[0.0, 0.0, 0.0]], "times": [0.0]},
        "sim": {"dt": 0.5, "duration": 2.0, "mode": "decentralized"},
    }


# --------------------------------------------------------------------------
# Loading and validation


def test_load_scenario_from_dict():
    sc = load_scenario(scenario_dict())
    assert sc.vehicle_count == 3
    assert sc.dt == 0.5
    assert sc.control_mode == "decentralized"
    assert sc.mpc.np == 4 and sc.mpc.nu == 2
    assert_allclose(sc.mpc.u_max, [5.0, 5.0, 5.0])
    assert_allclose(sc.mpc.Q, np.diag([1, 1, 1, 0.1, 0.1, 0.1]))


def test_load_scenario_from_file(tmp_path):
    raw = """
[vehicles]
positions = [[0.0, 0.0, 0.0]]
a_max = 2.0
v_max = 10.0
[mpc]
np = 3
nu = 2
nc = 3
q = 1.0
r = 0.5
[formation]
mode = "virtual_structure"
offsets = [[0.0, 0.0, 0.0]]
d_min = 1.0
[path]
waypoints = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]
speed = 2.0
[sim]
dt = 0.5
duration = 3.0
"""
    f = tmp_path / "one.toml"
    f.write_text(raw)
    sc = load_scenario(f)
    assert sc.vehicle_count == 1
    assert sc.control_mode == "centralized"  # the default
    assert sc.path.duration == pytest.approx(5.0)


def test_load_scenario_bad_toml_and_missing_file(tmp_path):
    f = tmp_path / "broken.toml"
    f.write_text("[vehicles\n")
    with pytest.raises(ConfigurationError, match="TOML"):
        load_scenario(f)
    with pytest.raises(OSError):
        load_scenario(tmp_path / "absent.toml")


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.update(extra={}), "extra: unknown section"),
    (lambda d: d["vehicles"].update(bogus=1), "vehicles.bogus: unknown key"),
    (lambda d: d["vehicles"].pop("a_max"), "vehicles.a_max: missing required key"),
    (lambda d: d.pop("path"), "path: missing required section"),
    (lambda d: d["mpc"].update(nu=9), "nu"),
    (lambda d: d["mpc"].update(q=[1.0, 1.0]), "mpc.q"),
    (lambda d: d["formation"].update(mode="swarm"), "formation.mode"),
    (lambda d: d["sim"].update(mode="manual"), "sim.mode"),
    (lambda d: d["sim"].update(duration=0.0), "sim.duration"),
    (lambda d: d["path"].update(speed=1.0), "path.speed"),
    (lambda d: d["vehicles"].update(count=7), "vehicles.count"),
])
def test_load_scenario_errors_name_the_key(mutate, message):
    data = copy.deepcopy(scenario_dict())
    mutate(data)
    with pytest.raises(ConfigurationError, match=message):
        load_scenario(data)


def test_scenario_rejects_tight_slots_and_tight_starts():
    data = copy.deepcopy(scenario_dict())
    data["formation"]["d_min"] = 8.0  # slots are ~7.07 m apart
    with pytest.raises(ConfigurationError, match="d_min"):
        load_scenario(data)
    data = copy.deepcopy(scenario_dict())
    data["vehicles"]["positions"] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                                     [-5.0, -5.0, 0.0]]
    with pytest.raises(ConfigurationError, match="start"):
        load_scenario(data)


def test_riccati_terminal_weight_from_scenario():
    data = copy.deepcopy(scenario_dict())
    data["mpc"]["p"] = "riccati"
    sc = load_scenario(data)
    model = double_integrator_3d(sc.dt)
    expected = riccati_terminal_weight(model.A, model.B, sc.mpc.Q, sc.mpc.R)
    assert_allclose(sc.mpc.P, expected)
    data["mpc"]["p"] = "magic"
    with pytest.raises(ConfigurationError, match="mpc.p"):
        load_scenario(data)


def test_scenario_findings_reports_problems():
    data = copy.deepcopy(scenario_dict())
    errors, warnings = scenario_findings(data)
    assert errors == [] and warnings == []

    data["mpc"]["nu"] = 9
    errors, _ = scenario_findings(data)
    assert len(errors) == 1 and "nu" in errors[0]

    data = copy.deepcopy(scenario_dict())
    data["obstacles"] = [{"center": [0.0, 0.0], "radius": 1.0}]
    _, warnings = scenario_findings(data)
    # diameter 2 m < one 10 m step, and vehicle 0 starts at the center
    assert len(warnings) == 2
    assert any("dt" in w for w in warnings)
    assert any("vehicle 0" in w for w in warnings)


def test_inner_loop_clips_per_axis():
    limits = ActuatorLimits(a_max=[1.0, 2.0, 3.0], v_max=10.0)
    out = inner_loop([5.0, -5.0, 0.5], limits)
    assert_allclose(out, [1.0, -2.0, 0.5])


# --------------------------------------------------------------------------
# Closed loop


def test_equilibrium_run_stays_pinned():
    log, metrics = run_scenario(load_scenario(scenario_dict()))
    assert log.steps == 5  # ceil(2.0 / 0.5) + 1 rows
    assert np.max(np.abs(log.inputs)) < 1e-6
    assert metrics.rms_formation_error < 1e-9
    assert metrics.violation_count == 0
    assert np.all(log.converged)


def test_centralized_equilibrium_matches():
    data = copy.deepcopy(scenario_dict())
    data["sim"]["mode"] = "centralized"
    log, metrics = run_scenario(load_scenario(data))
    assert np.max(np.abs(log.inputs)) < 1e-6
    assert metrics.rms_formation_error < 1e-9


def test_run_is_deterministic_to_the_bit():
    sc = load_scenario(scenario_dict())
    log1, m1 = run_scenario(sc)
    log2, m2 = run_scenario(sc)
    assert np.array_equal(log1.states, log2.states)
    assert np.array_equal(log1.inputs, log2.inputs)
    assert np.array_equal(log1.residuals, log2.residuals)
    assert m1 == m2


def tracking_dict() -> dict:
    data = scenario_dict()
    data["path"] = {"waypoints": [[0.0, 0.0, 0.0], [40.0, 0.0, 0.0]],
                    "speed": 4.0}
    data["sim"]["duration"] = 4.0
    return data


def test_nominal_prediction_matches_realized_state():
    """One-step-ahead predictions coincide with the propagated plant."""
    for mode in ("decentralized", "centralized"):
        data = tracking_dict()
        data["sim"]["mode"] = mode
        log, _ = run_scenario(load_scenario(data))
        steps = log.steps - 1
        assert_allclose(log.predicted_next[:steps], log.states[1:steps + 1],
                        atol=1e-7)


def test_log_time_grid_and_row_count():
    data = tracking_dict()
    data["sim"]["duration"] = 3.2  # not a multiple of dt: 7 steps, 8 rows
    log, _ = run_scenario(load_scenario(data))
    assert log.steps == 8
    assert_allclose(log.times, np.arange(8) * 0.5)
    assert log.states.shape == (8, 3, 6)
    assert np.all(np.isfinite(log.references))
    assert np.all(log.iterations >= 0)


def test_pairwise_and_clearance_columns():
    data = tracking_dict()
    data["obstacles"] = [{"center": [100.0, 100.0], "radius": 3.0,
                          "margin": 1.0}]
    log, metrics = run_scenario(load_scenario(data))
    # three vehicles: pairwise defined everywhere, 7.07 at the start
    assert log.min_pairwise[0, 0] == pytest.approx(np.sqrt(50.0))
    assert metrics.min_separation <= np.sqrt(50.0) + 1e-9
    # remote obstacle: clearance defined and never violated
    assert np.all(np.isfinite(log.min_clearance))
    assert metrics.min_obstacle_clearance > 0
    assert log.obstacle_circles == ((100.0, 100.0, 4.0),)


# --------------------------------------------------------------------------
# Metrics


def make_log(states, inputs=None, refs=None, obstacle_circles=()) -> TrajectoryLog:
    states = np.asarray(states, dtype=float)
    S, V = states.shape[:2]
    return TrajectoryLog(
        times=np.arange(S) * 1.0,
        states=states,
        inputs=np.zeros((S, V, 3)) if inputs is None else np.asarray(inputs, float),
        references=np.zeros((S, V, 6)) if refs is None else np.asarray(refs, float),
        iterations=np.ones((S, V), dtype=int),
        residuals=np.zeros((S, V)),
        converged=np.ones((S, V), dtype=bool),
        formation_errors=np.zeros((S, V)),
        min_pairwise=np.full((S, V), np.nan),
        min_clearance=np.full((S, V), np.nan),
        obstacle_circles=obstacle_circles,
    )


def test_compute_metrics_counts_each_vehicles_breach():
    sc = load_scenario(scenario_dict())
    states = np.zeros((2, 3, 6))
    states[:, 0, :3] = [0.0, 0.0, 0.0]
    states[:, 1, :3] = [-5.0, 5.0, 0.0]
    states[:, 2, :3] = [-5.0, -5.0, 0.0]
    states[1, 1, :3] = [0.0, 1.0, 0.0]  # 1 m from vehicle 0: below d_min = 2
    log = make_log(states)
    metrics = compute_metrics(log, sc)
    # the single breach is seen from both ends, one count per vehicle
    assert metrics.violation_count == 2


def test_compute_metrics_total_cost_hand_value():
    sc = load_scenario(scenario_dict())
    states = np.zeros((2, 1, 6))
    states[0, 0, 0] = 1.0   # 1 m x error at row 0
    inputs = np.zeros((2, 1, 3))
    inputs[0, 0, 0] = 2.0   # applied on the only propagated row
    refs = np.zeros((2, 1, 6))
    data = copy.deepcopy(scenario_dict())
    data["vehicles"]["positions"] = [[0.0, 0.0, 0.0]]
    data["formation"]["offsets"] = [[0.0, 0.0, 0.0]]
    sc = load_scenario(data)
    log = make_log(states, inputs=inputs, refs=refs)
    metrics = compute_metrics(log, sc)
    # Q x-weight 1 on a 1 m error, R 0.1 on a 2 m/s^2 input
    assert metrics.total_cost == pytest.approx(1.0 + 0.1 * 4.0)
    assert metrics.min_separation is None
    assert metrics.min_obstacle_clearance is None


def test_metrics_json_round_trip(tmp_path):
    metrics = Metrics(rms_formation_error=0.5, max_formation_error=1.0,
                      min_separation=None, min_obstacle_clearance=2.0,
                      violation_count=0, mean_solver_iterations=12.5,
                      total_cost=3.25)
    path = tmp_path / "metrics.json"
    write_metrics_json(metrics, path)
    text = path.read_text()
    assert text.endswith("}\n")
    loaded = json.loads(text)
    assert loaded == metrics.to_dict()
    assert list(loaded) == sorted(loaded)


# --------------------------------------------------------------------------
# CSV round trip


def test_csv_round_trip_is_exact(tmp_path):
    data = tracking_dict()
    data["obstacles"] = [{"center": [100.0, 100.0], "radius": 3.0}]
    log, _ = run_scenario(load_scenario(data))
    path = tmp_path / "trajectory.csv"
    write_trajectory_csv(log, path)
    back = read_trajectory_csv(path)
    assert np.array_equal(back.times, log.times)
    assert np.array_equal(back.states, log.states)
    assert np.array_equal(back.inputs, log.inputs)
    assert np.array_equal(back.references, log.references)
    assert np.array_equal(back.iterations, log.iterations)
    assert np.array_equal(back.residuals, log.residuals)
    assert np.array_equal(back.converged, log.converged)
    assert np.array_equal(back.formation_errors, log.formation_errors)
    assert np.array_equal(back.min_pairwise, log.min_pairwise)
    assert np.array_equal(back.min_clearance, log.min_clearance)
    assert back.obstacle_circles == log.obstacle_circles
    assert back.predicted_next is None


def test_csv_empty_columns_round_trip_as_nan(tmp_path):
    data = copy.deepcopy(scenario_dict())
    data["vehicles"]["positions"] = [[0.0, 0.0, 0.0]]
    data["formation"]["offsets"] = [[0.0, 0.0, 0.0]]
    log, _ = run_scenario(load_scenario(data))
    assert np.all(np.isnan(log.min_pairwise))
    path = tmp_path / "single.csv"
    write_trajectory_csv(log, path)
    first_row = path.read_text().splitlines()[1].split(",")
    assert first_row[-1] == "" and first_row[-2] == ""
    back = read_trajectory_csv(path)
    assert np.all(np.isnan(back.min_pairwise))
    assert np.all(np.isnan(back.min_clearance))


def test_csv_reader_rejects_malformed_input(tmp_path):
    good = tmp_path / "good.csv"
    log, _ = run_scenario(load_scenario(scenario_dict()))
    write_trajectory_csv(log, good)

    bad_header = tmp_path / "bad_header.csv"
    bad_header.write_text("step,time\n0,0.0\n")
    with pytest.raises(ConfigurationError, match="header"):
        read_trajectory_csv(bad_header)

    empty = tmp_path / "empty.csv"
    empty.write_text(good.read_text().splitlines()[0] + "\n")
    with pytest.raises(ConfigurationError, match="no trajectory rows"):
        read_trajectory_csv(empty)

    missing_row = tmp_path / "missing.csv"
    lines = good.read_text().splitlines()
    missing_row.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ConfigurationError, match="rows"):
        read_trajectory_csv(missing_row)

    bad_obstacle = tmp_path / "bad_obstacle.csv"
    bad_obstacle.write_text("# obstacle: 1 2\n" + good.read_text())
    with pytest.raises(ConfigurationError, match="obstacle"):
        read_trajectory_csv(bad_obstacle)
