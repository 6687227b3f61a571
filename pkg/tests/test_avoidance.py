import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from formation_mpc import (CircleObstacle, ConfigurationError, SeparationSpec,
                           feasibility_guard, obstacle_constraints,
                           reduce_obstacle, separation_constraints,
                           validate_clearance)
from formation_mpc.avoidance import pair_normals


def test_reduce_obstacle_adds_margin():
    obs = reduce_obstacle({"center": [10.0, 0.0], "radius": 2.0}, margin=1.0)
    assert obs.effective_radius == pytest.approx(3.0)
    assert reduce_obstacle({"center": [0, 0], "radius": 2.0}).effective_radius == 2.0


def test_reduce_obstacle_stacks_margins_on_existing_circle():
    base = CircleObstacle([1.0, 1.0], radius=2.0, margin=0.5)
    widened = reduce_obstacle(base, margin=0.25)
    assert widened.effective_radius == pytest.approx(2.75)


def test_obstacle_validation():
    with pytest.raises(ConfigurationError, match="radius"):
        CircleObstacle([0.0, 0.0], radius=0.0)
    with pytest.raises(ConfigurationError, match="margin"):
        CircleObstacle([0.0, 0.0], radius=1.0, margin=-0.1)
    with pytest.raises(ConfigurationError, match="center"):
        CircleObstacle([0.0, 0.0, 0.0], radius=1.0)
    with pytest.raises(ConfigurationError, match="d_min"):
        SeparationSpec(0.0)


# --------------------------------------------------------------------------
# Obstacle half-planes


def test_obstacle_constraint_known_half_plane():
    # linearization point west of the circle: the plane caps x at 7
    obs = CircleObstacle([10.0, 0.0], radius=3.0)
    rows = obstacle_constraints([[6.0, 0.0]], obs)
    assert len(rows) == 1
    con = rows[0]
    assert con.step == 1 and con.soft and con.start == 0
    assert_allclose(con.coeffs, [-1.0, 0.0])
    assert con.lower == pytest.approx(-7.0)
    # n . p >= lower is x <= 7: the boundary point passes, inside fails
    assert con.coeffs @ [7.0, 0.0] >= con.lower
    assert con.coeffs @ [7.1, 0.0] < con.lower


def test_obstacle_constraint_tight_on_boundary_point():
    obs = CircleObstacle([10.0, 0.0], radius=3.0)
    out = np.array([math.cos(0.7), math.sin(0.7)])
    p = obs.center + 3.0 * out
    # second point recedes radially, so the plain supporting plane applies
    con = obstacle_constraints([p, p + 0.5 * out], obs)[0]
    assert_allclose(con.coeffs, out, atol=1e-12)
    assert con.coeffs @ p - con.lower == pytest.approx(0.0, abs=1e-12)


def test_obstacle_constraint_slack_matches_distance():
    obs = CircleObstacle([10.0, 0.0], radius=3.0)
    p = np.array([-2.0, 5.0])
    con = obstacle_constraints([p], obs)[0]
    slack = con.coeffs @ p - con.lower
    assert slack == pytest.approx(np.linalg.norm(p - obs.center) - 3.0)


def test_obstacle_center_fallback_uses_x_axis(caplog):
    obs = CircleObstacle([4.0, 4.0], radius=2.0)
    with caplog.at_level(logging.WARNING, logger="formation_mpc.avoidance"):
        con = obstacle_constraints([[4.0, 4.0]], obs)[0]
    assert_allclose(con.coeffs, [1.0, 0.0])
    assert "center" in caplog.text


def test_head_on_approach_turns_the_plane_sideways(caplog):
    """A dead-centered approach gets a lateral plane instead of a wall."""
    obs = CircleObstacle([10.0, 0.0], radius=3.0)
    points = [[6.0, 0.0], [6.5, 0.0]]
    with caplog.at_level(logging.DEBUG, logger="formation_mpc.avoidance"):
        rows = obstacle_constraints(points, obs)
    # first point is outside engagement range: plain radial normal
    assert_allclose(rows[0].coeffs, [-1.0, 0.0])
    # second is engaged and exactly head-on: pushed to the left of travel
    assert_allclose(rows[1].coeffs, [0.0, 1.0])
    assert "head-on" in caplog.text


def test_off_center_approach_keeps_radial_normal():
    obs = CircleObstacle([10.0, 0.0], radius=3.0)
    rows = obstacle_constraints([[6.0, 0.5], [6.5, 0.5]], obs)
    d = np.array([6.5, 0.5]) - obs.center
    assert_allclose(rows[1].coeffs, d / np.linalg.norm(d))


def test_stationary_point_inside_keepout_gets_lateral_plane():
    # a parked prediction pressed against the circle is treated as blocked
    # travel toward the center; the plane turns to its left-hand side
    obs = CircleObstacle([10.0, 0.0], radius=3.0)
    rows = obstacle_constraints([[12.0, 0.0]], obs)
    assert_allclose(rows[0].coeffs, [0.0, -1.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.5, 6.0),
       st.floats(-math.pi, math.pi), st.floats(-30.0, 30.0))
def test_obstacle_half_plane_is_outer_approximation(cx, cy, r, angle, along):
    """No point admitted by the plane is inside the circle."""
    obs = CircleObstacle([cx, cy], radius=r)
    p_lin = obs.center + (r + 2.0) * np.array([math.cos(angle), math.sin(angle)])
    con = obstacle_constraints([p_lin], obs)[0]
    n = con.coeffs
    # walk the constraint boundary: every admitted boundary point clears r_eff
    perp = np.array([-n[1], n[0]])
    boundary = con.lower * n + along * perp
    assert np.linalg.norm(boundary - obs.center) >= r - 1e-9


# --------------------------------------------------------------------------
# Pairwise separation


def test_pair_normals_mirror_exactly():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(6, 2)) * 10
    b = rng.normal(size=(6, 2)) * 10
    assert np.array_equal(pair_normals(a, b), -pair_normals(b, a))


def test_pair_normals_coincident_fallback(caplog):
    with caplog.at_level(logging.WARNING, logger="formation_mpc.avoidance"):
        normals = pair_normals([[1.0, 1.0]], [[1.0, 1.0]])
    assert_allclose(normals, [[1.0, 0.0]])
    assert "coincident" in caplog.text


def test_pair_normals_shape_mismatch():
    with pytest.raises(ConfigurationError, match="matching"):
        pair_normals([[0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]])


def test_separation_rows_split_the_gap_at_the_midpoint():
    spec = SeparationSpec(2.0)
    rows_i = separation_constraints([[0.0, 0.0]], [[4.0, 0.0]], spec)
    rows_j = separation_constraints([[4.0, 0.0]], [[0.0, 0.0]], spec)
    ci, cj = rows_i[0], rows_j[0]
    # i keeps x <= 1, the mirrored call keeps j at x >= 3
    assert_allclose(ci.coeffs, [-1.0, 0.0])
    assert ci.lower == pytest.approx(-1.0)
    assert_allclose(cj.coeffs, [1.0, 0.0])
    assert cj.lower == pytest.approx(3.0)
    # both linearization points sit one meter clear of their claims
    assert ci.coeffs @ [0.0, 0.0] - ci.lower == pytest.approx(1.0)
    assert cj.coeffs @ [4.0, 0.0] - cj.lower == pytest.approx(1.0)


def test_separation_tight_at_exactly_d_min():
    spec = SeparationSpec(2.0)
    con = separation_constraints([[0.0, 0.0]], [[2.0, 0.0]], spec)[0]
    assert con.coeffs @ [0.0, 0.0] - con.lower == pytest.approx(0.0, abs=1e-12)


def test_separation_steps_and_offsets():
    spec = SeparationSpec(1.0)
    pred = np.zeros((4, 2))
    other = np.tile([3.0, 0.0], (4, 1))
    rows = separation_constraints(pred, other, spec, output_offset=6)
    assert [c.step for c in rows] == [1, 2, 3, 4]
    assert all(c.start == 6 and c.soft for c in rows)


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10),
       st.floats(-10, 10), st.floats(0.5, 4.0), st.floats(-20, 20),
       st.floats(-20, 20))
def test_separation_claims_are_disjoint_by_d_min(ax, ay, bx, by, d_min, ti, tj):
    """Any pair of points obeying the two mirrored rows is d_min apart."""
    pa, pb = np.array([ax, ay]), np.array([bx, by])
    if np.linalg.norm(pa - pb) < 1e-6:
        return
    spec = SeparationSpec(d_min)
    ca = separation_constraints([pa], [pb], spec)[0]
    cb = separation_constraints([pb], [pa], spec)[0]
    # worst case: both sit exactly on their claim boundaries
    na, nb = ca.coeffs, cb.coeffs
    qa = ca.lower * na + ti * np.array([-na[1], na[0]])
    qb = cb.lower * nb + tj * np.array([-nb[1], nb[0]])
    assert np.linalg.norm(qa - qb) >= d_min - 1e-9


# --------------------------------------------------------------------------
# Exact clearance validation


def test_validate_clearance_reports_none_when_nothing_applies():
    traj = np.array([[0.0, 0.0], [1.0, 0.0]])
    report = validate_clearance(traj, [], SeparationSpec(2.0))
    assert report.min_obstacle_clearance is None
    assert report.min_pairwise_distance is None
    assert report.violations == ()


def test_validate_clearance_tangency_passes():
    obs = CircleObstacle([0.0, 0.0], radius=2.0, margin=1.0)
    traj = np.array([[3.0, 0.0], [0.0, 3.0]])
    report = validate_clearance(traj, [obs], SeparationSpec(1.0))
    assert report.min_obstacle_clearance == pytest.approx(0.0)
    assert report.violations == ()


def test_validate_clearance_records_obstacle_breach():
    obs = CircleObstacle([0.0, 0.0], radius=2.0)
    traj = np.array([[5.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
    report = validate_clearance(traj, [obs], SeparationSpec(1.0))
    assert report.min_obstacle_clearance == pytest.approx(-1.0)
    assert len(report.violations) == 1
    v = report.violations[0]
    assert v.kind == "obstacle" and v.step == 1
    assert v.distance == pytest.approx(1.0) and v.limit == pytest.approx(2.0)


def test_validate_clearance_records_separation_breach():
    spec = SeparationSpec(2.0)
    a = np.array([[0.0, 0.0], [0.0, 0.0]])
    b = np.array([[3.0, 0.0], [1.0, 0.0]])
    report = validate_clearance(a, [], spec, all_trajectories=[b])
    assert report.min_pairwise_distance == pytest.approx(1.0)
    assert [v.kind for v in report.violations] == ["separation"]
    assert report.violations[0].step == 1


def test_validate_clearance_skips_own_trajectory_and_checks_shapes():
    a = np.array([[0.0, 0.0], [0.0, 0.0]])
    report = validate_clearance(a, [], SeparationSpec(2.0), all_trajectories=[a])
    assert report.min_pairwise_distance is None
    with pytest.raises(ConfigurationError, match="shape"):
        validate_clearance(a, [], SeparationSpec(2.0),
                           all_trajectories=[np.zeros((3, 2))])


def test_validate_clearance_pairwise_at_exact_d_min_passes():
    spec = SeparationSpec(2.0)
    a = np.array([[0.0, 0.0]])
    b = np.array([[2.0, 0.0]])
    report = validate_clearance(a, [], spec, all_trajectories=[b])
    assert report.min_pairwise_distance == pytest.approx(2.0)
    assert report.violations == ()


# --------------------------------------------------------------------------
# Discretization guard


def test_guard_warns_on_thin_obstacle():
    note = feasibility_guard(CircleObstacle([0, 0], radius=0.5), v_max=1.0, dt=2.0)
    assert note is not None
    assert "margin" in note and "dt" in note


def test_guard_quiet_on_fat_obstacle():
    assert feasibility_guard(CircleObstacle([0, 0], radius=5.0),
                             v_max=1.0, dt=2.0) is None


def test_guard_boundary_is_quiet():
    # diameter exactly equal to the step distance does not trigger
    assert feasibility_guard(CircleObstacle([0, 0], radius=1.0),
                             v_max=1.0, dt=2.0) is None
