"""IDM car following and MOBIL lane changing for scripted traffic.

All vehicles of a world live in flat arrays with the ego at index 0.  A
vehicle is a *member* of lane ``l`` when its body overlaps that lane
(``|y - centre(l)| < (lane_width + width) / 2``) or when it carries ``l`` as
its assigned/origin lane label.  Leaders and followers are found among the
members of a vehicle's lanes, which lets traffic react to a drifting ego and
to vehicles half-way through a lane change.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .kinematics import ControlInput

A_BRAKE_MAX = 10.0


@dataclass(frozen=True)
class IdmParams:
    a_max: float = 6.0
    delta_exp: float = 4.0
    v_r: float = 30.0
    T_gap: float = 1.5
    # comfortable deceleration is a positive magnitude; a negative value flips the braking term
    b_comf: float = 5.0
    d_0: float = 10.0

    def __post_init__(self):
        if self.a_max <= 0 or self.b_comf <= 0 or self.d_0 <= 0 or self.T_gap < 0:
            raise ValueError(f"invalid IDM parameters: {self}")

    def as_array(self) -> np.ndarray:
        """Packed form used by the compiled kernels (``v_r`` is per vehicle there)."""
        return np.array([self.a_max, self.delta_exp, self.T_gap, self.b_comf, self.d_0])


@dataclass(frozen=True)
class LeaderView:
    gap: float
    closing_speed: float


@dataclass(frozen=True)
class MobilParams:
    b_safe: float = 2.0
    p: float = 0.001
    a_th: float = 0.2

    def as_array(self) -> np.ndarray:
        return np.array([self.b_safe, self.p, self.a_th])


@dataclass(frozen=True)
class LaneChangeContext:
    a_e: float
    a_e_new: float
    a_n: float
    a_n_new: float
    a_o: float
    a_o_new: float


@njit(cache=True)
def _desired_gap(v, closing, a_max, T_gap, b_comf, d_0):
    dynamic = T_gap * v + v * closing / (2.0 * math.sqrt(a_max * b_comf))
    return d_0 + max(0.0, dynamic)


@njit(cache=True)
def _idm(v, v_r, has_leader, gap, closing, idm):
    a_max, delta_exp, T_gap, b_comf, d_0 = idm[0], idm[1], idm[2], idm[3], idm[4]
    free = a_max * (1.0 - (v / v_r) ** delta_exp)
    if not has_leader:
        acc = free
    elif gap <= 0.0:
        return -A_BRAKE_MAX
    else:
        d_r = _desired_gap(v, closing, a_max, T_gap, b_comf, d_0)
        acc = free - a_max * (d_r / gap) ** 2
    return min(max(acc, -A_BRAKE_MAX), a_max)


def desired_gap(v: float, closing_speed: float, params: IdmParams = IdmParams()) -> float:
    """Desired bumper-to-bumper distance; the dynamic part is floored at zero."""
    return _desired_gap(v, closing_speed, params.a_max, params.T_gap, params.b_comf, params.d_0)


def idm_accel(v: float, leader: LeaderView | None, params: IdmParams = IdmParams()) -> float:
    """IDM acceleration, clamped to ``[-A_BRAKE_MAX, a_max]``.

    A zero gap is treated as contact and returns the hard braking limit.
    """
    if leader is None:
        return _idm(v, params.v_r, False, 1.0, 0.0, params.as_array())
    return _idm(v, params.v_r, True, leader.gap, leader.closing_speed, params.as_array())


def mobil_incentive(ctx: LaneChangeContext, params: MobilParams = MobilParams()) -> float:
    return (ctx.a_e_new - ctx.a_e) + params.p * (
        (ctx.a_n_new - ctx.a_n) + (ctx.a_o_new - ctx.a_o)
    )


@njit(cache=True)
def _mobil_ok(a_e, a_e_new, a_n, a_n_new, a_o, a_o_new, mobil):
    b_safe, p, a_th = mobil[0], mobil[1], mobil[2]
    if a_n_new < -b_safe:
        return False
    return (a_e_new - a_e) + p * ((a_n_new - a_n) + (a_o_new - a_o)) > a_th


def mobil_decide(ctx: LaneChangeContext, params: MobilParams = MobilParams()) -> bool:
    """Safety criterion on the new follower, then the politeness-weighted incentive."""
    return bool(_mobil_ok(ctx.a_e, ctx.a_e_new, ctx.a_n, ctx.a_n_new, ctx.a_o, ctx.a_o_new,
                          params.as_array()))


# --- neighbour search over the flat vehicle arrays -------------------------


@njit(cache=True)
def _lane_masks(y, lane_label, from_label, n_lanes, lane_width, width, out):
    """Bit ``l - 1`` of ``out[k]`` is set when vehicle ``k`` is a member of lane ``l``."""
    band = 0.5 * (lane_width + width)
    for k in range(y.shape[0]):
        m = 0
        for lane in range(1, n_lanes + 1):
            if (lane_label[k] == lane or from_label[k] == lane
                    or abs(y[k] - (lane - 0.5) * lane_width) < band):
                m |= 1 << (lane - 1)
        out[k] = m
    return out


@njit(cache=True)
def _nearest(i, bits, forward, x, masks):
    """Nearest vehicle ahead of (``forward``) or behind ``i`` sharing a lane in ``bits``.

    Ties in position are broken by index so that a vehicle is never both
    leader and follower.
    """
    best = -1
    best_dx = np.inf
    xi = x[i]
    for j in range(x.shape[0]):
        if j == i or (masks[j] & bits) == 0:
            continue
        ahead = x[j] > xi or (x[j] == xi and j > i)
        if ahead != forward:
            continue
        dx = x[j] - xi if forward else xi - x[j]
        if dx < best_dx:
            best_dx = dx
            best = j
    return best


@njit(cache=True)
def _idm_pair(f, lead, x, v, v_r, length, idm):
    """IDM acceleration of vehicle ``f`` with ``lead`` as leader (-1: free road)."""
    if lead < 0:
        return _idm(v[f], v_r[f], False, 1.0, 0.0, idm)
    return _idm(v[f], v_r[f], True, x[lead] - x[f] - length, v[f] - v[lead], idm)


@njit(cache=True)
def _mobil_target(i, x, v, v_r, lane_label, masks, n_lanes, length, idm, mobil):
    """Lane MOBIL would move vehicle ``i`` into (left first), or 0 to stay."""
    current = lane_label[i]
    cur_bits = 1 << (current - 1)
    lead_old = _nearest(i, cur_bits, True, x, masks)
    fol_old = _nearest(i, cur_bits, False, x, masks)
    a_e = _idm_pair(i, lead_old, x, v, v_r, length, idm)
    a_o = 0.0
    a_o_new = 0.0
    if fol_old >= 0:
        a_o = _idm_pair(fol_old, i, x, v, v_r, length, idm)
        a_o_new = _idm_pair(fol_old, lead_old, x, v, v_r, length, idm)
    for step in (1, -1):
        target = current + step
        if target < 1 or target > n_lanes:
            continue
        bits = 1 << (target - 1)
        lead_new = _nearest(i, bits, True, x, masks)
        fol_new = _nearest(i, bits, False, x, masks)
        a_e_new = _idm_pair(i, lead_new, x, v, v_r, length, idm)
        a_n = 0.0
        a_n_new = 0.0
        if fol_new >= 0:
            a_n = _idm_pair(fol_new, lead_new, x, v, v_r, length, idm)
            a_n_new = _idm_pair(fol_new, i, x, v, v_r, length, idm)
        if _mobil_ok(a_e, a_e_new, a_n, a_n_new, a_o, a_o_new, mobil):
            return target
    return 0


def scripted_policy(world, index: int, road, idm: IdmParams = IdmParams(),
                    mobil: MobilParams = MobilParams()) -> tuple[ControlInput, int]:
    """Command for one scripted vehicle of ``world``.

    Returns the IDM acceleration against the current path leader (zero
    steering: lateral motion is the lane-change glide) and the lane MOBIL
    selects, 0 meaning stay.  ``road`` needs ``n_lanes``, ``lane_width`` and a
    ``body`` with ``length``/``width``.
    """
    body = road.body
    idm_arr = idm.as_array()
    masks = _lane_masks(world.y, world.lane, world.from_lane, road.n_lanes, road.lane_width,
                        body.width, np.zeros(world.x.shape[0], dtype=np.int64))
    lead = _nearest(index, masks[index], True, world.x, masks)
    acc = _idm_pair(index, lead, world.x, world.v, world.v_r, body.length, idm_arr)
    target = 0
    if world.lane[index] > 0:
        target = _mobil_target(index, world.x, world.v, world.v_r, world.lane, masks,
                               road.n_lanes, body.length, idm_arr, mobil.as_array())
    return ControlInput(float(acc), 0.0), int(target)
