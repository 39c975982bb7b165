import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from highway_ppo.behavior import (A_BRAKE_MAX, IdmParams, LaneChangeContext, LeaderView,
                                  MobilParams, desired_gap, idm_accel, mobil_decide,
                                  mobil_incentive, scripted_policy)
from highway_ppo.env import ScenarioConfig, lane_centre, make_world
from highway_ppo.kinematics import VehicleState

IDM = IdmParams()
CFG = ScenarioConfig()


def test_parameter_defaults():
    assert (IDM.a_max, IDM.delta_exp, IDM.T_gap, IDM.b_comf, IDM.d_0) == (6, 4, 1.5, 5, 10)
    assert MobilParams() == MobilParams(2.0, 0.001, 0.2)
    with pytest.raises(ValueError):
        IdmParams(b_comf=-5)


def test_desired_gap_examples():
    assert desired_gap(0, 0) == 10
    assert desired_gap(25, 0) == 47.5
    assert desired_gap(20, -100) == 10


def test_idm_examples():
    assert idm_accel(30, None) == 0.0
    assert idm_accel(30, LeaderView(desired_gap(30, 0), 0.0)) == pytest.approx(-6.0)
    a = idm_accel(20, LeaderView(100.0, 0.0))
    # d_r = 40 -> 6 * (1 - 16/81 - 0.16)
    assert a == pytest.approx(6 * (1 - 16 / 81 - 0.16), abs=1e-12)
    assert a == pytest.approx(3.8548, abs=1e-4)
    assert idm_accel(20, LeaderView(0.0, 0.0)) == -A_BRAKE_MAX
    assert idm_accel(25, LeaderView(1.0, 10.0)) == -A_BRAKE_MAX


@given(st.floats(0, 30), st.floats(0, 30), st.floats(1, 300), st.floats(-10, 10))
def test_idm_monotone(v1, v2, gap, dv):
    lo, hi = sorted((v1, v2))
    lead = LeaderView(gap, dv)
    assert idm_accel(hi, lead) <= idm_accel(lo, lead) + 1e-12
    assert idm_accel(v1, LeaderView(gap, dv)) <= idm_accel(v1, LeaderView(gap + 5, dv)) + 1e-12
    assert idm_accel(v1, lead) <= IDM.a_max


@given(st.floats(0, 29.9))
def test_free_road_accelerates(v):
    a = idm_accel(v, None)
    assert 0 < a <= IDM.a_max


def test_platoon_fixed_point():
    # leader at 25 m/s, follower integrated with IDM for 120 s
    dt, v_l = 0.05, 25.0
    gap, v = 30.0, 25.0
    for _ in range(int(120 / dt)):
        a = idm_accel(v, LeaderView(gap, v - v_l))
        v = min(max(v + a * dt, 0.0), 30.0)
        gap += (v_l - v) * dt
    expected = 47.5 / math.sqrt(1 - (25 / 30) ** 4)
    assert expected == pytest.approx(66.0, abs=0.05)
    assert abs(gap - expected) <= 0.01 * expected


def ctx(**kw):
    base = dict(a_e=0.0, a_e_new=0.0, a_n=0.0, a_n_new=0.0, a_o=0.0, a_o_new=0.0)
    base.update(kw)
    return LaneChangeContext(**base)


def test_mobil_truth_table():
    assert not mobil_decide(ctx(a_e_new=100.0, a_n_new=-3.0))
    assert mobil_decide(ctx(a_e=1.0, a_e_new=1.5))
    assert not mobil_decide(ctx(a_e=1.0, a_e_new=1.0, a_n=-1.0, a_n_new=-1.0))
    assert mobil_incentive(ctx(a_e_new=0.5)) == 0.5


@given(st.lists(st.floats(-10, 6), min_size=6, max_size=6), st.floats(-5, 5))
def test_mobil_depends_on_differences_only(acc, shift):
    c1 = ctx(**dict(zip(("a_e", "a_e_new", "a_n", "a_n_new", "a_o", "a_o_new"), acc)))
    c2 = LaneChangeContext(*(a + shift for a in acc))
    assert mobil_incentive(c1) == pytest.approx(mobil_incentive(c2), abs=1e-9)


@given(st.floats(-100, 100))
def test_safety_veto(gain):
    assert not mobil_decide(ctx(a_e_new=gain, a_n_new=-2.0001))


def _world(others, ego=VehicleState(-500.0, 2.0, 0.0, 0.0)):
    # the ego is parked far behind so it never interacts
    return make_world(ego, others, CFG)


ROAD = SimpleNamespace(n_lanes=3, lane_width=4.0, body=CFG.body)


def test_lone_vehicle_equilibrium():
    w = _world([(VehicleState(100.0, lane_centre(2, CFG), 0.0, 24.0), 2)])
    cmd, target = scripted_policy(w, 1, ROAD)
    assert cmd.a == 0.0 and cmd.delta_f == 0.0 and target == 0


def test_trapped_follower_changes_lane():
    y1 = lane_centre(1, CFG)
    w = _world([(VehicleState(100.0, y1, 0.0, 24.0), 1), (VehicleState(130.0, y1, 0.0, 10.0), 1)],
               ego=VehicleState(-500.0, lane_centre(3, CFG), 0.0, 0.0))
    w.v_r[1] = 30.0
    _, target = scripted_policy(w, 1, ROAD)
    assert target == 2


def test_both_sides_blocked():
    ys = [lane_centre(k, CFG) for k in (1, 2, 3)]
    others = [(VehicleState(100.0, ys[1], 0.0, 24.0), 2), (VehicleState(130.0, ys[1], 0.0, 10.0), 2),
              (VehicleState(97.0, ys[0], 0.0, 30.0), 1), (VehicleState(97.0, ys[2], 0.0, 30.0), 3)]
    w = _world(others)
    w.v_r[1] = 30.0
    _, target = scripted_policy(w, 1, ROAD)
    assert target == 0


def test_left_is_tried_first():
    y2 = lane_centre(2, CFG)
    w = _world([(VehicleState(100.0, y2, 0.0, 24.0), 2), (VehicleState(130.0, y2, 0.0, 10.0), 2)])
    w.v_r[1] = 30.0
    _, target = scripted_policy(w, 1, ROAD)
    assert target == 3
    assert np.all(w.x[1:] == [100.0, 130.0])
