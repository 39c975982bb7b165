import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from highway_ppo.kinematics import (BodyParams, ControlInput, VehicleState, clamp_input,
                                    integrate_step, simulate, slip_angle, state_derivative,
                                    wrap_angle)

BODY = BodyParams()


def test_body_defaults_and_validation():
    assert (BODY.length, BODY.width, BODY.l_f, BODY.l_r) == (5.0, 2.0, 2.5, 2.5)
    assert (BODY.a_min, BODY.a_max_cmd, BODY.steer_max) == (-5.0, 5.0, math.pi / 4)
    with pytest.raises(ValueError):
        BodyParams(l_f=0.0)
    with pytest.raises(ValueError):
        BodyParams(l_f=3.0, l_r=3.0)


def test_slip_angle_examples():
    assert slip_angle(0.0, BODY) == 0.0
    assert slip_angle(math.pi / 4, BODY) == pytest.approx(0.4636476090008061, abs=1e-12)
    assert slip_angle(-0.3, BODY) == -slip_angle(0.3, BODY)


@given(st.floats(-math.pi / 4, math.pi / 4))
def test_slip_angle_bounded(delta):
    beta = slip_angle(delta, BODY)
    assert abs(beta) <= abs(delta) + 1e-15
    assert abs(beta) <= math.atan(0.5 * math.tan(BODY.steer_max)) + 1e-15


def test_state_derivative_examples():
    assert state_derivative(VehicleState(0, 0, 0, 20), ControlInput(0, 0), BODY) == (20, 0, 0, 0)
    dx, dy, dpsi, dv = state_derivative(VehicleState(0, 0, 0, 0), ControlInput(1.5, 0.4), BODY)
    assert (dx, dy, dpsi, dv) == (0, 0, 0, 1.5)
    dpsi = state_derivative(VehicleState(0, 0, 0, 20), ControlInput(0, math.pi / 4), BODY)[2]
    # 8 * sin(atan(1/2)) = 8 / sqrt(5)
    assert dpsi == pytest.approx(8 / math.sqrt(5), abs=1e-12)


def test_straight_line_euler_sum():
    s = simulate(VehicleState(0, 0, 0, 20), ControlInput(1.0, 0.0), BODY, 1.0, 0.05)
    assert abs(s.v - 21.0) <= 1e-12
    assert abs(s.x - 20.475) <= 1e-12
    assert s.y == 0.0 and s.psi == 0.0


def test_zero_input_keeps_speed_and_heading():
    s0 = VehicleState(1.0, 2.0, 0.2, 17.0)
    s = simulate(s0, ControlInput(0, 0), BODY, 3.0)
    assert s.v == s0.v and s.psi == s0.psi
    assert s.y - s0.y == pytest.approx(3.0 * 17.0 * math.sin(0.2), rel=1e-12)


def test_circle_closes():
    v, delta = 10.0, 0.3
    beta = slip_angle(delta, BODY)
    period = 2 * math.pi * BODY.l_r / (v * math.sin(beta))
    radius = BODY.l_r / math.sin(beta)
    dt = 0.001
    s = simulate(VehicleState(0, 0, 0, v), ControlInput(0, delta), BODY, period, dt)
    miss = math.hypot(s.x, s.y)
    assert miss <= 0.01 * 2 * math.pi * radius


def test_euler_first_order_convergence():
    s0 = VehicleState(0, 0, 0, 15.0)
    u = ControlInput(2.0, 0.2)

    def pos(dt):
        s = simulate(s0, u, BODY, 1.0, dt)
        return s.x, s.y

    ref = pos(1e-5)
    err = [math.dist(pos(dt), ref) for dt in (0.05, 0.025)]
    assert 1.5 <= err[0] / err[1] <= 2.5


@settings(max_examples=200)
@given(st.floats(0, 30), st.lists(st.tuples(st.floats(-5, 5), st.floats(-0.8, 0.8)),
                                  min_size=1, max_size=40))
def test_speed_clamp_and_heading_wrap(v0, controls):
    s = VehicleState(0, 0, 0, v0)
    for a, d in controls:
        s = integrate_step(s, clamp_input(ControlInput(a * 3, d), BODY), BODY)
        assert 0.0 <= s.v <= BODY.v_max
        assert -math.pi < s.psi <= math.pi


def test_clamp_input_and_bad_dt():
    c = clamp_input(ControlInput(9.0, -2.0), BODY)
    assert c == ControlInput(5.0, -math.pi / 4)
    with pytest.raises(ValueError):
        integrate_step(VehicleState(0, 0, 0, 1), ControlInput(0, 0), BODY, dt=0.0)


def test_wrap_angle():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
