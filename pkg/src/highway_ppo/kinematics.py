"""Kinematic bicycle model and its forward-Euler integration.

The scalar kernels (``_slip``, ``_derivative``, ``_euler``) are numba-compiled
so the traffic simulator can call them from its inner loop; the public
functions wrap them with the dataclass types.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from numba import njit

DEFAULT_DT = 0.05


@dataclass(frozen=True)
class BodyParams:
    length: float = 5.0
    width: float = 2.0
    l_f: float = 2.5
    l_r: float = 2.5
    v_max: float = 30.0
    a_min: float = -5.0
    a_max_cmd: float = 5.0
    steer_max: float = math.pi / 4

    def __post_init__(self):
        if self.l_f <= 0 or self.l_r <= 0:
            raise ValueError("axle distances must be positive")
        if self.l_f + self.l_r > self.length + 1e-12:
            raise ValueError("l_f + l_r cannot exceed the body length")


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    psi: float
    v: float


@dataclass(frozen=True)
class ControlInput:
    a: float
    delta_f: float


@njit(cache=True)
def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    return angle - 2.0 * math.pi * math.ceil((angle - math.pi) / (2.0 * math.pi))


@njit(cache=True)
def _slip(delta_f, l_f, l_r):
    return math.atan(l_r / (l_f + l_r) * math.tan(delta_f))


@njit(cache=True)
def _derivative(psi, v, a, delta_f, l_f, l_r):
    beta = _slip(delta_f, l_f, l_r)
    return (
        v * math.cos(psi + beta),
        v * math.sin(psi + beta),
        v / l_r * math.sin(beta),
        a,
    )


@njit(cache=True)
def _euler(x, y, psi, v, a, delta_f, l_f, l_r, v_max, dt):
    dx, dy, dpsi, dv = _derivative(psi, v, a, delta_f, l_f, l_r)
    v_new = v + dv * dt
    if v_new < 0.0:
        v_new = 0.0
    elif v_new > v_max:
        v_new = v_max
    return x + dx * dt, y + dy * dt, wrap_angle(psi + dpsi * dt), v_new


def clamp_input(control: ControlInput, body: BodyParams) -> ControlInput:
    a = min(max(control.a, body.a_min), body.a_max_cmd)
    delta = min(max(control.delta_f, -body.steer_max), body.steer_max)
    return ControlInput(a, delta)


def slip_angle(delta_f: float, body: BodyParams) -> float:
    """Slip angle at the centre of gravity for front steering ``delta_f``."""
    return _slip(delta_f, body.l_f, body.l_r)


def state_derivative(state: VehicleState, control: ControlInput, body: BodyParams):
    """Return ``(dx, dy, dpsi, dv)`` for the bicycle model."""
    return _derivative(state.psi, state.v, control.a, control.delta_f, body.l_f, body.l_r)


def integrate_step(
    state: VehicleState, control: ControlInput, body: BodyParams, dt: float = DEFAULT_DT
) -> VehicleState:
    """One explicit Euler step; speed clamped to ``[0, v_max]`` and heading re-wrapped."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return VehicleState(
        *_euler(state.x, state.y, state.psi, state.v, control.a, control.delta_f,
                body.l_f, body.l_r, body.v_max, dt)
    )


def simulate(
    state: VehicleState, control: ControlInput, body: BodyParams, duration: float,
    dt: float = DEFAULT_DT,
) -> VehicleState:
    """Hold ``control`` for ``duration`` seconds of Euler substeps."""
    n = int(round(duration / dt))
    for _ in range(n):
        state = integrate_step(state, control, body, dt)
    return state
