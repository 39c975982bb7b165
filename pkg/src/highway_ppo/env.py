"""Highway driving MDP: spawning, 20 Hz stepping, observations and rewards.

Lanes are numbered from 1 (rightmost, the preferred lane) to N; lane ``l``
has its centreline at ``y = (l - 0.5) * lane_width`` and the road spans
``0 <= y <= N * lane_width``.  Vehicles are stored as flat arrays with the
ego at index 0.  Lane changes of scripted vehicles are a linear lateral glide
with the heading kept road aligned.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from .behavior import IdmParams, MobilParams, _idm_pair, _lane_masks, _mobil_target, _nearest
from .kinematics import BodyParams, VehicleState, _euler, _slip

OBS_DIM = 16
ACTION_DIM = 2
AGENT, REFERENCE = 0, 1


class ScenarioError(ValueError):
    """Scenario configuration that cannot be realised."""


class EpisodeFinished(RuntimeError):
    """``step`` called on a world whose episode already ended."""


@dataclass(frozen=True)
class ScenarioConfig:
    n_lanes: int = 3
    vehicles_per_lane: int = 5
    lane_width: float = 4.0
    road_length: float = 1000.0
    sim_freq: int = 20
    decision_period: float = 1.0
    episode_duration: float = 50.0
    spawn_speed_range: tuple[float, float] = (23.0, 25.0)
    v_max: float = 30.0
    sensing_range: float = 200.0
    min_spawn_gap: float = 15.0
    spawn_start: float = 30.0
    spawn_end_frac: float = 0.6
    lane_change_duration: float = 1.0
    lane_change_cooldown: float = 3.0
    # "absolute": -10 (v_max - v)^2 in (m/s)^2; "relative": deficit as a fraction of v_max.
    # With the relative form a stopped car scores ~0.96 per step and never crashes,
    # so a learner settles on standing still.
    speed_penalty: str = "absolute"
    seed: int = 0
    body: BodyParams = field(default_factory=BodyParams)
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)

    def __post_init__(self):
        if self.n_lanes < 1 or self.vehicles_per_lane < 0:
            raise ScenarioError("need at least one lane and a non-negative vehicle count")
        if self.speed_penalty not in ("relative", "absolute"):
            raise ScenarioError(f"unknown speed_penalty {self.speed_penalty!r}")
        per = self.decision_period * self.sim_freq
        if abs(per - round(per)) > 1e-9 or round(per) < 1:
            raise ScenarioError("decision_period * sim_freq must be a positive integer")

    @property
    def dt(self) -> float:
        return 1.0 / self.sim_freq

    @property
    def substeps(self) -> int:
        return int(round(self.decision_period * self.sim_freq))

    @property
    def max_decisions(self) -> int:
        return int(math.ceil(self.episode_duration / self.decision_period - 1e-9))

    @property
    def reward_floor(self) -> float:
        return -(100.0 + 40.0 * (self.n_lanes - 1) ** 2 + 10.0 * self.speed_scale**2)

    @property
    def speed_scale(self) -> float:
        """Deficit unit of the speed term: 1 (relative) or v_max m/s (absolute)."""
        return 1.0 if self.speed_penalty == "relative" else self.v_max


PRESETS = {
    "default": ScenarioConfig(),
    "adapt1": ScenarioConfig(n_lanes=4, vehicles_per_lane=5),
    "adapt2": ScenarioConfig(n_lanes=2, vehicles_per_lane=10),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario preset {name!r}; known: {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass
class WorldState:
    """Full simulation state.  Index 0 of every array is the ego."""

    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    v: np.ndarray
    v_r: np.ndarray
    lane: np.ndarray          # assigned/target lane label, 0 = none (agent-driven ego)
    from_lane: np.ndarray     # origin lane while gliding, else == lane
    glide_y0: np.ndarray
    glide_ticks: np.ndarray   # substeps into the current lane change, -1 when idle
    cooldown_ticks: np.ndarray
    ego_mode: int = AGENT
    ticks: int = 0
    decisions: int = 0
    done: bool = False

    @property
    def n_surrounding(self) -> int:
        return self.x.shape[0] - 1

    @property
    def ego(self) -> VehicleState:
        return VehicleState(float(self.x[0]), float(self.y[0]), float(self.psi[0]), float(self.v[0]))

    def vehicle(self, i: int) -> VehicleState:
        return VehicleState(float(self.x[i]), float(self.y[i]), float(self.psi[i]), float(self.v[i]))

    def elapsed(self, config: ScenarioConfig) -> float:
        return self.ticks / config.sim_freq

    def copy(self) -> WorldState:
        arrays = {k: getattr(self, k).copy() for k in _ARRAY_FIELDS}
        return WorldState(**arrays, ego_mode=self.ego_mode, ticks=self.ticks,
                          decisions=self.decisions, done=self.done)


_ARRAY_FIELDS = ("x", "y", "psi", "v", "v_r", "lane", "from_lane", "glide_y0",
                 "glide_ticks", "cooldown_ticks")


@dataclass
class StepResult:
    observation: np.ndarray
    reward_normalized: float
    reward_raw: float
    done: bool
    collided: bool = False
    off_road: bool = False
    success: bool = False
    truncated: bool = False

    @property
    def info(self) -> dict:
        return {"collided": self.collided, "off_road": self.off_road,
                "success": self.success, "truncated": self.truncated,
                "reward_raw": self.reward_raw}


def make_world(ego: VehicleState, others: list[tuple[VehicleState, int]], config: ScenarioConfig,
               ego_mode: int = AGENT, request_speeds=None) -> WorldState:
    """Hand-built world (tests, diagnostics).  ``others`` holds (state, lane) pairs."""
    n = len(others) + 1
    states = [ego] + [s for s, _ in others]
    lanes = np.array([0] + [lane for _, lane in others], dtype=np.int64)
    if ego_mode == REFERENCE:
        lanes[0] = lane_index(ego.y, config)
    v_r = np.full(n, config.v_max)
    if request_speeds is not None:
        v_r[1:] = request_speeds
    else:
        v_r[1:] = [s.v for s, _ in others]
    return WorldState(
        x=np.array([s.x for s in states], dtype=float),
        y=np.array([s.y for s in states], dtype=float),
        psi=np.array([s.psi for s in states], dtype=float),
        v=np.array([s.v for s in states], dtype=float),
        v_r=v_r,
        lane=lanes,
        from_lane=lanes.copy(),
        glide_y0=np.zeros(n),
        glide_ticks=np.full(n, -1, dtype=np.int64),
        cooldown_ticks=np.zeros(n, dtype=np.int64),
        ego_mode=ego_mode,
    )


def lane_centre(lane: int, config: ScenarioConfig) -> float:
    return (lane - 0.5) * config.lane_width


def spawn_scenario(config: ScenarioConfig, seed: int | None = None,
                   ego_mode: int = AGENT) -> WorldState:
    """Random initial world, deterministic in ``seed`` (``config.seed`` if omitted).

    Each lane gets ``vehicles_per_lane`` vehicles placed uniformly over the
    spawn window ahead of the ego; a lane is redrawn until every bumper gap
    is at least ``min_spawn_gap``.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    body = config.body
    k = config.vehicles_per_lane
    lo = config.spawn_start
    hi = config.road_length * config.spawn_end_frac
    pitch = body.length + config.min_spawn_gap
    if k > 0 and (hi <= lo or (k - 1) * pitch > hi - lo):
        raise ScenarioError(
            f"cannot place {k} vehicles per lane with {config.min_spawn_gap} m gaps in [{lo}, {hi}] m")
    v_lo, v_hi = config.spawn_speed_range
    ego = VehicleState(0.0, lane_centre(1, config), 0.0, float(rng.uniform(v_lo, v_hi)))
    others = []
    for lane in range(1, config.n_lanes + 1):
        for _ in range(10_000):
            xs = np.sort(rng.uniform(lo, hi, size=k))
            if k < 2 or np.min(np.diff(xs)) - body.length >= config.min_spawn_gap:
                break
        else:
            raise ScenarioError(f"gap rejection sampling did not converge for lane {lane}")
        speeds = rng.uniform(v_lo, v_hi, size=k)
        others += [(VehicleState(float(xv), lane_centre(lane, config), 0.0, float(sv)), lane)
                   for xv, sv in zip(xs, speeds)]
    return make_world(ego, others, config, ego_mode=ego_mode)


# --- compiled kernels -------------------------------------------------------


@njit(cache=True)
def _lane_index(y, n_lanes, lane_width):
    y = min(max(y, 0.0), n_lanes * lane_width)
    lane = int(math.ceil(y / lane_width))
    return min(max(lane, 1), n_lanes)


@njit(cache=True)
def _rect_overlap(xa, ya, pa, xb, yb, pb, half_len, half_wid):
    """Separating-axis test for two equal oriented rectangles."""
    dx = xb - xa
    dy = yb - ya
    for k in range(4):
        ang = pa if k < 2 else pb
        if k % 2 == 1:
            ang += 0.5 * math.pi
        nx = math.cos(ang)
        ny = math.sin(ang)
        ra = half_len * abs(math.cos(pa) * nx + math.sin(pa) * ny) + \
            half_wid * abs(-math.sin(pa) * nx + math.cos(pa) * ny)
        rb = half_len * abs(math.cos(pb) * nx + math.sin(pb) * ny) + \
            half_wid * abs(-math.sin(pb) * nx + math.cos(pb) * ny)
        if abs(dx * nx + dy * ny) >= ra + rb:
            return False
    return True


@njit(cache=True)
def _ego_collides(x, y, psi, length, width):
    reach = length + width
    for j in range(1, x.shape[0]):
        if abs(x[j] - x[0]) > reach or abs(y[j] - y[0]) > reach:
            continue
        if _rect_overlap(x[0], y[0], psi[0], x[j], y[j], psi[j], 0.5 * length, 0.5 * width):
            return True
    return False


@njit(cache=True)
def _track_lane_steer(y, psi, v, y_ref, l_f, l_r, steer_max):
    """Steering that steers the bicycle model onto ``y_ref``.

    Lateral error -> heading reference -> yaw-rate command, inverted through
    the slip-angle relation.
    """
    v_eff = max(v, 1.0)
    psi_ref = -math.atan(1.0 * (y - y_ref) / v_eff)
    psi_ref = min(max(psi_ref, -0.3), 0.3)
    yaw_rate = 5.0 * (psi_ref - psi)
    s = min(max(l_r * yaw_rate / v_eff, -1.0), 1.0)
    beta = math.asin(s)
    delta = math.atan(math.tan(beta) * (l_f + l_r) / l_r)
    return min(max(delta, -steer_max), steer_max)


@njit(cache=True)
def _mobil_pass(x, y, v, v_r, lane, from_lane, glide_y0, glide_ticks, cooldown_ticks,
                include_ego, n_lanes, lane_width, length, width, idm, mobil, cooldown_len):
    start = 0 if include_ego else 1
    masks = _lane_masks(y, lane, from_lane, n_lanes, lane_width, width,
                        np.zeros(x.shape[0], dtype=np.int64))
    for i in range(start, x.shape[0]):
        if glide_ticks[i] >= 0 or cooldown_ticks[i] > 0:
            continue
        target = _mobil_target(i, x, v, v_r, lane, masks, n_lanes, length, idm, mobil)
        if target > 0:
            # later vehicles in this pass see the new claim on the target lane
            masks[i] |= 1 << (target - 1)
            from_lane[i] = lane[i]
            lane[i] = target
            glide_y0[i] = y[i]
            glide_ticks[i] = 0
            cooldown_ticks[i] = cooldown_len


@njit(cache=True)
def _advance(x, y, psi, v, v_r, lane, from_lane, glide_y0, glide_ticks, cooldown_ticks,
             ego_mode, a_cmd, delta_cmd, n_sub, dt, n_lanes, lane_width, length, width,
             l_f, l_r, v_max, a_min, a_max_cmd, steer_max, idm, glide_len):
    """Run up to ``n_sub`` substeps; stop early on ego collision or road departure.

    Returns (substeps run, collided, off_road).
    """
    n = x.shape[0]
    acc = np.zeros(n)
    masks = np.zeros(n, dtype=np.int64)
    road_w = n_lanes * lane_width
    for k in range(n_sub):
        _lane_masks(y, lane, from_lane, n_lanes, lane_width, width, masks)
        for i in range(1, n):
            lead = _nearest(i, masks[i], True, x, masks)
            acc[i] = _idm_pair(i, lead, x, v, v_r, length, idm)
        if ego_mode == 1:
            lead = _nearest(0, masks[0], True, x, masks)
            a_ego = min(max(_idm_pair(0, lead, x, v, v_r, length, idm), a_min), a_max_cmd)
            y_ref = (lane[0] - 0.5) * lane_width
            if glide_ticks[0] >= 0:
                frac = min((glide_ticks[0] + 1) / glide_len, 1.0)
                y_ref = glide_y0[0] + (y_ref - glide_y0[0]) * frac
            d_ego = _track_lane_steer(y[0], psi[0], v[0], y_ref, l_f, l_r, steer_max)
        else:
            a_ego = a_cmd
            d_ego = delta_cmd
        for i in range(1, n):
            x[i] += v[i] * dt
            v[i] = min(max(v[i] + acc[i] * dt, 0.0), v_max)
        for i in range(n):
            if cooldown_ticks[i] > 0:
                cooldown_ticks[i] -= 1
            if glide_ticks[i] >= 0:
                glide_ticks[i] += 1
                frac = min(glide_ticks[i] / glide_len, 1.0)
                if i > 0:
                    centre = (lane[i] - 0.5) * lane_width
                    y[i] = glide_y0[i] + (centre - glide_y0[i]) * frac
                if glide_ticks[i] >= glide_len:
                    glide_ticks[i] = -1
                    from_lane[i] = lane[i]
        x[0], y[0], psi[0], v[0] = _euler(x[0], y[0], psi[0], v[0], a_ego, d_ego,
                                          l_f, l_r, v_max, dt)
        if y[0] < 0.0 or y[0] > road_w:
            return k + 1, _ego_collides(x, y, psi, length, width), True
        if _ego_collides(x, y, psi, length, width):
            return k + 1, True, False
    return n_sub, False, False


@njit(cache=True)
def _observe(x, y, psi, v, n_lanes, lane_width, v_max, sensing_range, out):
    ego_lane = _lane_index(y[0], n_lanes, lane_width)
    out[0] = v[0] / v_max
    out[1] = (ego_lane - 1) / (n_lanes - 1) if n_lanes > 1 else 0.0
    out[2] = (y[0] - (ego_lane - 0.5) * lane_width) / lane_width
    out[3] = psi[0] / math.pi
    slot = 4
    for offset in (1, 0, -1):
        lane = ego_lane + offset
        if lane < 1 or lane > n_lanes:
            for q in range(4):
                out[slot + q] = 0.0
            slot += 4
            continue
        lead = -1
        fol = -1
        lead_dx = np.inf
        fol_dx = np.inf
        for j in range(1, x.shape[0]):
            if _lane_index(y[j], n_lanes, lane_width) != lane:
                continue
            dx = x[j] - x[0]
            if dx > 0.0:
                if dx < lead_dx:
                    lead_dx = dx
                    lead = j
            elif -dx < fol_dx:
                fol_dx = -dx
                fol = j
        for j, dist in ((lead, lead_dx), (fol, fol_dx)):
            if j < 0 or dist > sensing_range:
                out[slot] = 1.0
                out[slot + 1] = 0.0
            else:
                out[slot] = dist / sensing_range
                out[slot + 1] = abs(v[0] - v[j]) / v_max
            slot += 2
    return out


# --- public operations ------------------------------------------------------


def lane_index(y: float, config: ScenarioConfig) -> int:
    """Nearest lane (1 = rightmost); boundary ties go to the lower index."""
    return _lane_index(float(y), config.n_lanes, config.lane_width)


def observe(world: WorldState, config: ScenarioConfig) -> np.ndarray:
    """16-dim observation: ego block then (leader, follower) for left/current/right lanes.

    Each neighbour slot is ``[|dx| / sensing_range, |dv| / v_max]``; an empty
    slot reads ``(1, 0)`` and a lane that does not exist reads ``(0, 0)``.
    The heading component is ``psi / pi`` so every entry stays in [-1, 1].
    """
    out = np.empty(OBS_DIM)
    return _observe(world.x, world.y, world.psi, world.v, config.n_lanes, config.lane_width,
                    config.v_max, config.sensing_range, out)


def check_collision(world: WorldState, body: BodyParams) -> bool:
    return bool(_ego_collides(world.x, world.y, world.psi, body.length, body.width))


def reward(world_after: WorldState, collided: bool, config: ScenarioConfig) -> tuple[float, float]:
    """Raw step reward and its affine map onto [0, 1].

    The floor is the worst raw value (collision, outermost lane, stopped),
    so the normalized reward of every reachable state lies in [0, 1].
    """
    lane = lane_index(world_after.y[0], config)
    deficit = (config.v_max - world_after.v[0]) / config.v_max * config.speed_scale
    raw = -100.0 * float(collided) - 40.0 * (lane - 1) ** 2 - 10.0 * deficit**2
    floor = config.reward_floor
    return raw, (raw - floor) / (0.0 - floor)


def is_success(world: WorldState, config: ScenarioConfig) -> bool:
    """Ego has passed every vehicle by a body length, or reached the road end."""
    if world.x[0] >= config.road_length:
        return True
    if world.n_surrounding == 0:
        return False
    return bool(np.all(world.x[0] - world.x[1:] >= config.body.length))


def step(world: WorldState, action, config: ScenarioConfig) -> tuple[WorldState, StepResult]:
    """Advance one decision period in place and return ``(world, result)``.

    ``action`` is ``(acceleration, steering)``, clamped to the body limits and
    held for every substep.  It is ignored when the ego runs in reference
    mode (IDM + MOBIL with lane tracking).
    """
    if world.done:
        raise EpisodeFinished("step() called on a finished episode")
    body = config.body
    if world.ego_mode == AGENT:
        a_cmd = min(max(float(action[0]), body.a_min), body.a_max_cmd)
        d_cmd = min(max(float(action[1]), -body.steer_max), body.steer_max)
    else:
        a_cmd = d_cmd = 0.0
    idm = config.idm.as_array()
    glide_len = int(round(config.lane_change_duration * config.sim_freq))
    cooldown_len = int(round(config.lane_change_cooldown * config.sim_freq))
    _mobil_pass(world.x, world.y, world.v, world.v_r, world.lane, world.from_lane,
                world.glide_y0, world.glide_ticks, world.cooldown_ticks,
                world.ego_mode == REFERENCE, config.n_lanes, config.lane_width, body.length,
                body.width, idm, config.mobil.as_array(), cooldown_len)
    n_run, collided, off_road = _advance(
        world.x, world.y, world.psi, world.v, world.v_r, world.lane, world.from_lane,
        world.glide_y0, world.glide_ticks, world.cooldown_ticks, world.ego_mode, a_cmd, d_cmd,
        config.substeps, config.dt, config.n_lanes, config.lane_width, body.length, body.width,
        body.l_f, body.l_r, config.v_max, body.a_min, body.a_max_cmd, body.steer_max, idm,
        glide_len)
    world.ticks += n_run
    world.decisions += 1
    crashed = collided or off_road
    success = not crashed and is_success(world, config)
    truncated = not (crashed or success) and world.decisions >= config.max_decisions
    done = crashed or success or truncated
    world.done = done
    raw, norm = reward(world, crashed, config)
    return world, StepResult(observe(world, config), norm, raw, done,
                             collided=collided, off_road=off_road, success=success,
                             truncated=truncated)


TRAJECTORY_COLUMNS = ("t", "ego_x", "ego_y", "ego_psi", "ego_v", "action_a", "action_delta",
                      "reward_norm", "collided")


class HighwayEnv:
    """Resettable environment wrapper used by the trainers.

    Episode seeds are drawn from an internal generator seeded once at
    construction, so a sequence of resets is reproducible.
    """

    observation_dim = OBS_DIM
    action_dim = ACTION_DIM

    def __init__(self, config: ScenarioConfig = PRESETS["default"], seed: int | None = None,
                 ego_mode: int = AGENT, record: bool = False):
        self.config = config
        self.ego_mode = ego_mode
        self.record = record
        self._rng = np.random.default_rng(config.seed if seed is None else seed)
        self.world: WorldState | None = None
        self.trajectory: list[tuple] = []
        self.episode_seed: int | None = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is None:
            seed = int(self._rng.integers(0, 2**63 - 1))
        self.episode_seed = seed
        self.world = spawn_scenario(self.config, seed=seed, ego_mode=self.ego_mode)
        self.trajectory = []
        return observe(self.world, self.config)

    def step(self, action=None):
        if action is None:
            action = (0.0, 0.0)
        _, res = step(self.world, action, self.config)
        if self.record:
            w = self.world
            applied = (float("nan"), float("nan")) if self.ego_mode == REFERENCE else (
                min(max(float(action[0]), self.config.body.a_min), self.config.body.a_max_cmd),
                min(max(float(action[1]), -self.config.body.steer_max), self.config.body.steer_max))
            self.trajectory.append((w.elapsed(self.config), w.x[0], w.y[0], w.psi[0], w.v[0],
                                    applied[0], applied[1], res.reward_normalized,
                                    int(res.collided or res.off_road)))
        return res.observation, res.reward_normalized, res.done, res.info


def write_trajectory_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(c)) if isinstance(c, float) else c for c in row])
