import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offloadsafe.geometry import Box
from offloadsafe.grid import OccupancyGrid
from offloadsafe.pipeline import (
    STAGE_ORDER, Applicability, Detection, MissingInput, NoDetections, NotOffloaded, Outcome,
    PipelineInputs, RouteMap, SafetyParams, Stage, Track, Trajectory, TrajectoryPoint,
    VehicleSpec, braking_distance, follow_distance, fov_radius, run_pipeline, safety_distance,
    select_stages, validate_tracks, validate_trajectory_detections, validate_trajectory_grid,
    validate_trajectory_map, validate_trajectory_tracks, validation_distance)

A, C = Applicability.ALWAYS, Applicability.CONDITIONAL
P = SafetyParams()
EGO = VehicleSpec()


def straight(v, y=0.0, n=41, dt=0.1, x0=0.0, stamp=0.0):
    return Trajectory(tuple(TrajectoryPoint(x0 + v * k * dt, y, 0.0, v, round(k * dt, 9))
                            for k in range(n)), stamp)


def det(x, y, extent=(4.5, 1.8), stamp=0.0):
    return Detection((x, y), extent, stamp)


def track(i, x, y, heading=0.0, speed=0.0, stamp=0.0):
    return Track(i, (x, y), heading, speed, (4.5, 1.8), stamp)


ROAD = RouteMap.from_reference(np.array([[x, 0.0] for x in range(0, 201, 5)]), 3.5)


# -- stage selection --------------------------------------------------------------

def test_stage_plans():
    assert select_stages({"MOT"}) == [(Stage.TRACK_VAL, A), (Stage.MAP_VAL, A),
                                      (Stage.TRAJ_DETECTIONS, C), (Stage.TRAJ_GRID, A)]
    assert select_stages({"ENV", "TPL"}) == [(Stage.MAP_VAL, A), (Stage.TRAJ_TRACKS, A),
                                             (Stage.TRAJ_DETECTIONS, C)]
    assert [s for s, _ in select_stages({"MOT", "ENV", "TPL"})] == STAGE_ORDER
    with pytest.raises(NotOffloaded):
        select_stages(set())
    with pytest.raises(ValueError):
        select_stages({"ENV"})


# -- distances ------------------------------------------------------------------------

def test_fov_radius():
    assert fov_radius((0, 0), [det(3, 4), det(6, 8)]) == pytest.approx(10.0)
    assert fov_radius((0, 0), [det(0, 42)]) == pytest.approx(42.0)
    assert fov_radius((1, 1), [det(1, 1)]) == 0.0
    with pytest.raises(NoDetections):
        fov_radius((0, 0), [])


def test_distance_examples():
    assert safety_distance(10) == pytest.approx(18.0)
    assert safety_distance(0) == 0.0
    assert safety_distance(13.89) == pytest.approx(25.0, abs=0.01)
    assert braking_distance(20, 8) == pytest.approx(25.0)
    assert braking_distance(0, 8) == 0.0
    assert braking_distance(13.89, 8) == pytest.approx(12.06, abs=0.005)
    assert follow_distance(20, 20, 8) == pytest.approx(36.0)
    assert follow_distance(10, 20, 8) == pytest.approx(18.0)
    assert follow_distance(20, 0, 8) == pytest.approx(61.0)
    with pytest.raises(ValueError):
        safety_distance(-1)
    with pytest.raises(ValueError):
        braking_distance(1, 0)


def test_validation_distance_branches():
    assert validation_distance(20, None, P) == braking_distance(20, P.a_b)
    assert validation_distance(20, (30.0, 0.0), P) == follow_distance(20, 0, P.a_b)


# -- track validation -----------------------------------------------------------------------

def test_tracks_near_detections_pass():
    tracks = [track(1, 10.1, 0.0), track(2, 20.0, 3.6)]
    v = validate_tracks(tracks, [det(10, 0), det(20, 3.5)], (0, 0), P)
    assert v.outcome is Outcome.PASS
    assert "0.100" in v.detail


def test_ghost_track_escalates():
    tracks = [track(1, 10, 0), track(2, 20, 3.5), track(3, 30, 0)]
    dets = [det(10, 0), det(20, 3.5), det(-20, 45)]
    v = validate_tracks(tracks, dets, (0, 0), P)
    assert v.outcome is Outcome.ESCALATE


def test_exact_tracks_pass_with_zero_mean():
    v = validate_tracks([track(1, 5, 5)], [det(5, 5)], (0, 0), P)
    assert v.outcome is Outcome.PASS and "0.000" in v.detail


def test_tracks_are_predicted_to_the_detection_time():
    # 10 m/s track stamped 0.1 s before the detections
    v = validate_tracks([track(1, 9.0, 0.0, 0.0, 10.0, stamp=0.0)], [det(10.0, 0.0, stamp=0.1)],
                        (0, 0), P)
    assert v.outcome is Outcome.PASS


def test_tracks_outside_the_field_of_view_are_ignored():
    v = validate_tracks([track(1, 500, 0)], [det(10, 0)], (0, 0), P)
    assert v.outcome is Outcome.PASS


# -- map validation ---------------------------------------------------------------------------

def test_map_check_examples():
    assert validate_trajectory_map(straight(10), ROAD, P).outcome is Outcome.PASS
    assert validate_trajectory_map(straight(10, y=0.4), ROAD, P).outcome is Outcome.PASS
    bad = validate_trajectory_map(straight(10, y=5.0), ROAD, P)
    assert bad.outcome is Outcome.UNSAFE and "corridor" in bad.detail


def test_route_map_brackets_reference():
    assert ROAD.check_brackets()


# -- collision checks -------------------------------------------------------------------------------

def test_tracks_check_examples():
    assert validate_trajectory_tracks(straight(10), [], EGO, P).outcome is Outcome.PASS
    oncoming = track(7, 12.0, 3.5, math.pi, 10.0)
    assert validate_trajectory_tracks(straight(10), [oncoming], EGO, P).outcome is Outcome.PASS
    stopped = Track(8, (10.0, 0.0), math.pi / 2, 0.0, (4.5, 1.8), 0.0)
    v = validate_trajectory_tracks(straight(10), [stopped], EGO, P)
    assert v.outcome is Outcome.UNSAFE and "track 8" in v.detail


def test_tracks_check_prunes_far_objects():
    p = SafetyParams(theta_obj=0.5)
    # the box overlaps but its centre is beyond theta_obj of every point
    wide = Track(9, (4.0, 2.0), 0.0, 0.0, (4.5, 3.0), 0.0)
    assert validate_trajectory_tracks(straight(0.1), [wide], EGO, p).outcome is Outcome.PASS
    assert validate_trajectory_tracks(straight(0.1), [wide], EGO, P).outcome is Outcome.UNSAFE


def test_detections_check_examples():
    assert validate_trajectory_detections(straight(10), [], None, EGO, P).outcome is Outcome.PASS
    lead_ok = validate_trajectory_detections(straight(10), [], (20.0, 10.0), EGO, P)
    assert lead_ok.outcome is Outcome.PASS
    too_close = validate_trajectory_detections(straight(10), [], (15.0, 10.0), EGO, P)
    assert too_close.outcome is Outcome.UNSAFE


def test_object_eight_metres_ahead_depends_on_speed():
    # 8 m bumper gap between two 4.5 m vehicles
    obj = [det(8.0 + 4.5, 0.0)]
    assert validate_trajectory_detections(straight(10), obj, None, EGO, P).outcome is Outcome.PASS
    assert validate_trajectory_detections(straight(12), obj, None, EGO, P).outcome is Outcome.UNSAFE


@settings(max_examples=60, deadline=None)
@given(st.floats(6.0, 30.0), st.floats(-1.5, 1.5), st.floats(0.5, 15.0), st.floats(0.1, 5.0))
def test_detection_check_is_monotone_in_speed(x, y, v, dv):
    dets = [det(x, y)]
    slow = validate_trajectory_detections(straight(v, n=81), dets, None, EGO, P, v_now=v)
    fast = validate_trajectory_detections(straight(v + dv, n=81), dets, None, EGO, P,
                                          v_now=v + dv)
    if slow.outcome is Outcome.UNSAFE:
        assert fast.outcome is Outcome.UNSAFE


def test_grid_check_examples():
    g = OccupancyGrid.centered((0.0, 0.0), 40.0, 0.2)
    assert validate_trajectory_grid(straight(10), g, EGO, P).outcome is Outcome.PASS
    g.cells[g.cell_of((3.0, 0.0))[::-1]] = True
    assert validate_trajectory_grid(straight(10), g, EGO, P).outcome is Outcome.UNSAFE


def test_grid_cell_beside_the_vehicle_is_caught_by_dilation():
    g = OccupancyGrid.centered((0.0, 0.0), 20.0, 0.2)
    ix, iy = g.cell_of((0.0, 1.0))
    g.cells[iy, ix] = True
    # one disk of radius 1 m on the centre of a 2 m square footprint
    ego = VehicleSpec(2.0, 2.0)
    v = validate_trajectory_grid(straight(1.0), g, ego, P, disk_radius=1.0)
    assert v.outcome is Outcome.UNSAFE


def test_grid_pose_outside_grid_is_unsafe():
    g = OccupancyGrid.centered((0.0, 0.0), 4.0, 0.2)
    v = validate_trajectory_grid(straight(15), g, EGO, P)
    assert v.outcome is Outcome.UNSAFE and "outside" in v.detail


# -- the whole pipeline -------------------------------------------------------------------------------

def test_clean_env_tpl_scene_is_safe():
    inputs = PipelineInputs(detections=[det(40, 3.5)], route_map=ROAD, ego_position=(0, 0),
                            tracks=[track(1, 40, 3.5)], traj=straight(10))
    res = run_pipeline(select_stages({"ENV", "TPL"}), inputs, P)
    assert res.safe
    assert res.executed == [Stage.MAP_VAL, Stage.TRAJ_TRACKS]


def test_ghost_tracks_cancel_tracking_even_with_a_clean_trajectory():
    dets = [det(40, 3.5), det(-30, 3.5)]
    tracks = [track(1, 40, 3.5), track(2, -30, 3.5), track(900, 15, 0.5)]
    inputs = PipelineInputs(detections=dets, route_map=ROAD, ego_position=(0, 0),
                            tracks=tracks, traj=straight(10),
                            grid=OccupancyGrid.centered((0, 0), 40, 0.2))
    res = run_pipeline(select_stages({"MOT", "ENV", "TPL"}), inputs, P)
    assert not res.safe and res.mot_untrusted
    assert res.stage is Stage.TRACK_VAL
    assert Stage.TRAJ_TRACKS not in res.executed
    assert Stage.TRAJ_DETECTIONS in res.executed


def test_grid_catches_what_an_empty_environment_missed():
    obstacle = Box(9.5, 0.0, 0.0, 4.5, 1.8)
    grid = OccupancyGrid.centered((0.0, 0.0), 40.0, 0.2)
    grid.fill_box(obstacle)
    inputs = PipelineInputs(detections=[det(9.5, 0.0)], route_map=ROAD, ego_position=(0, 0),
                            tracks=[track(1, 9.5, 0.0)], traj=straight(10), grid=lambda: grid)
    res = run_pipeline(select_stages({"MOT"}), inputs, P)
    assert not res.safe and res.stage is Stage.TRAJ_GRID
    assert res.executed == [Stage.TRACK_VAL, Stage.MAP_VAL, Stage.TRAJ_GRID]


def test_map_failure_stops_the_pipeline():
    inputs = PipelineInputs(detections=[], route_map=ROAD, ego_position=(0, 0), tracks=[],
                            traj=straight(10, y=20.0))
    res = run_pipeline(select_stages({"MOT", "ENV", "TPL"}), inputs, P)
    assert not res.safe and res.executed == [Stage.MAP_VAL]


def test_detections_failure_falls_through_to_grid():
    grid = OccupancyGrid.centered((0.0, 0.0), 40.0, 0.2)
    # a stale detection the grid does not confirm
    inputs = PipelineInputs(detections=[det(9.5, 0.0)], route_map=ROAD, ego_position=(0, 0),
                            tracks=[track(1, 5.0, -5.0)], traj=straight(10), grid=grid)
    res = run_pipeline(select_stages({"MOT", "ENV", "TPL"}), inputs, P)
    assert res.executed[-2:] == [Stage.TRAJ_DETECTIONS, Stage.TRAJ_GRID]
    assert res.mot_untrusted and res.stage is Stage.TRACK_VAL


def test_missing_inputs_are_named():
    inputs = PipelineInputs(detections=[], route_map=ROAD, ego_position=(0, 0), tracks=[])
    with pytest.raises(MissingInput, match="traj"):
        run_pipeline(select_stages({"ENV", "TPL"}), inputs, P)
    inputs = PipelineInputs(detections=[], route_map=ROAD, ego_position=(0, 0), tracks=[],
                            traj=straight(10))
    with pytest.raises(MissingInput, match="grid"):
        run_pipeline(select_stages({"MOT"}), inputs, P)


@settings(max_examples=80, deadline=None)
@given(st.sampled_from([{"MOT"}, {"MOT", "ENV", "TPL"}, {"ENV", "TPL"}]),
       st.lists(st.tuples(st.floats(-20, 40), st.floats(-6, 6)), max_size=4),
       st.floats(-3, 3), st.floats(0, 14), st.booleans())
def test_pipeline_order_and_purity(kinds, objs, y, v, ghost):
    dets = [det(x, oy) for x, oy in objs]
    tracks = [track(i, x, oy) for i, (x, oy) in enumerate(objs)]
    if ghost:
        tracks.append(track(99, 12.0, 0.0))
    grid = OccupancyGrid.centered((0, 0), 60.0, 0.2)
    for x, oy in objs:
        grid.fill_box(Box(x, oy, 0.0, 4.5, 1.8))
    inputs = PipelineInputs(detections=dets, route_map=ROAD, ego_position=(0, 0),
                            tracks=tracks, traj=straight(v, y=y), grid=grid)
    plan = select_stages(kinds)
    a = run_pipeline(plan, inputs, P)
    b = run_pipeline(plan, inputs, P)
    assert a == b
    order = [STAGE_ORDER.index(s) for s in a.executed]
    assert order == sorted(order) and len(set(order)) == len(order)
    assert set(a.executed) <= {s for s, _ in plan}
    if not a.safe:
        assert a.stage in a.executed


def test_surplus_ghost_is_charged_its_nearest_detection():
    # 2 real tracks on their detections plus a ghost with no detection of its own
    tracks = [track(1, 25, 0), track(2, 0, 25), track(3, 0, -20)]
    v = validate_tracks(tracks, [det(25, 0), det(0, 25)], (0, 0), SafetyParams())
    nearest = math.hypot(25, 20)
    assert v.outcome is Outcome.ESCALATE
    assert f"{nearest / 3:.3f} m over 3 tracks" in v.detail
