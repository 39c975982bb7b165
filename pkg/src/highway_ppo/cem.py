"""Noisy cross-entropy method over the flattened policy parameters.

Each generation samples a population from a diagonal Gaussian, scores every
candidate on the same few seeded episodes with the deterministic mean action,
and refits the Gaussian to the elites.  A linearly decaying term is added to
the refitted variance so the search does not collapse early.

Standard deviations and the variance noise are measured in units of a
per-coordinate ``scale``; for network weights this is the initialisation
bound ``1/sqrt(fan_in)``, so ``init_std = 0.5`` perturbs every layer by half
its initial spread instead of saturating the tanh units.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .policy_net import MlpParams, NetConfig, forward, init_params, mean_action
from .ppo import PpoConfig, TrainingDiverged, TrainStats

log = logging.getLogger(__name__)

# objective(theta, episode_seeds) -> (score, env_steps)
Objective = Callable[[np.ndarray, np.ndarray], "tuple[float, int]"]


@dataclass(frozen=True)
class CemConfig:
    population: int = 32
    elite_frac: float = 0.2
    init_std: float = 0.5
    noise_init: float = 0.05
    # Variance noise removed per generation; None spreads noise_init over all generations.
    noise_decay: float | None = None
    episodes_per_candidate: int = 3
    generations: int = 85
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.elite_frac <= 1:
            raise ValueError("elite_frac must lie in (0, 1]")
        if self.n_elite < 2:
            raise ValueError("population * elite_frac must be at least 2")
        if self.init_std < 0 or self.noise_init < 0 or self.episodes_per_candidate < 1:
            raise ValueError("invalid CEM configuration")

    @property
    def n_elite(self) -> int:
        return math.ceil(self.population * self.elite_frac - 1e-9)

    def noise(self, generation: int) -> float:
        """Additive variance for ``generation`` (0-based), decaying linearly to 0."""
        decay = self.noise_decay
        if decay is None:
            decay = self.noise_init / max(self.generations, 1)
        return max(0.0, self.noise_init - decay * generation)


def matched_generations(ppo: PpoConfig, cem: CemConfig, episode_steps: int = 50) -> int:
    """Generations whose worst-case step count matches PPO's interaction budget."""
    per_gen = cem.population * cem.episodes_per_candidate * episode_steps
    return max(1, round(ppo.iterations * ppo.actors * ppo.horizon / per_gen))


def param_scale(net_config: NetConfig) -> np.ndarray:
    """Per-parameter search unit: the uniform init bound of the owning layer.

    ``log_std`` does not affect deterministic evaluation and gets unit scale.
    """
    template = init_params(net_config)
    d = net_config.trunk_dim
    scale = template.map(lambda a: np.ones_like(a, dtype=np.float64))
    for k, (fan_in, _) in enumerate(net_config.layer_shapes):
        scale.weights[k][...] = scale.biases[k][...] = 1.0 / math.sqrt(fan_in)
    for a in (scale.mean_w, scale.mean_b, scale.value_w, scale.value_b):
        a[...] = 1.0 / math.sqrt(d)
    return scale.flatten()


@dataclass
class CemState:
    mean: np.ndarray
    std: np.ndarray
    scale: np.ndarray
    generation: int = 0
    best_params: np.ndarray | None = None
    best_return: float = -math.inf

    @classmethod
    def initial(cls, mean: np.ndarray, config: CemConfig, scale=None) -> CemState:
        mean = np.asarray(mean, dtype=np.float64).copy()
        scale = np.ones_like(mean) if scale is None else np.asarray(scale, dtype=np.float64)
        if scale.shape != mean.shape or np.any(scale <= 0):
            raise ValueError("scale must be positive and match the mean")
        return cls(mean, config.init_std * scale, scale.copy(), 0, mean.copy(), -math.inf)

    def copy(self) -> CemState:
        best = None if self.best_params is None else self.best_params.copy()
        return CemState(self.mean.copy(), self.std.copy(), self.scale, self.generation, best,
                        self.best_return)


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    elite_mean: float
    population_mean: float
    best: float
    env_steps: int
    episodes: int
    mean_std: float


def cem_generation(state: CemState, objective: Objective, config: CemConfig,
                   rng: np.random.Generator) -> tuple[CemState, GenerationStats]:
    """Sample, score, select the elites and refit; ``state`` is not modified."""
    seeds = rng.integers(0, 2**31 - 1, size=config.episodes_per_candidate)
    noise = rng.standard_normal((config.population, state.mean.size))
    candidates = state.mean + state.std * noise
    scores = np.empty(config.population)
    steps = 0
    for k, theta in enumerate(candidates):
        score, n = objective(theta, seeds)
        scores[k] = score if np.isfinite(score) else -np.inf
        steps += int(n)
    if not np.isfinite(scores).any():
        raise TrainingDiverged(f"generation {state.generation}: no candidate scored finitely")

    # stable sort so ties keep sampling order
    order = np.argsort(-scores, kind="stable")
    elite_idx = order[:config.n_elite]
    elites = candidates[elite_idx]
    var = elites.var(axis=0) + config.noise(state.generation) * state.scale**2

    new = state.copy()
    new.mean = elites.mean(axis=0)
    new.std = np.sqrt(var)
    new.generation += 1
    if scores[order[0]] > new.best_return:
        new.best_return = float(scores[order[0]])
        new.best_params = candidates[order[0]].copy()

    finite = scores[np.isfinite(scores)]
    stats = GenerationStats(state.generation, float(scores[elite_idx].mean()),
                            float(finite.mean()), float(scores[order[0]]), steps,
                            config.population * config.episodes_per_candidate,
                            float(np.mean(new.std / new.scale)))
    return new, stats


def episode_objective(env, net_config: NetConfig, template: MlpParams) -> Objective:
    """Mean normalized return of a parameter vector over seeded episodes."""

    def objective(theta, seeds):
        params = template.load_flat(theta)
        total, steps = 0.0, 0
        for seed in seeds:
            obs = env.reset(seed=int(seed))
            done = False
            while not done:
                action = mean_action(forward(params, obs), net_config)
                obs, r, done, _ = env.step(action)
                total += r
                steps += 1
        return total / len(seeds), steps

    return objective


@dataclass
class CemResult:
    params: MlpParams
    stats: list[TrainStats] = field(default_factory=list)
    generations: list[GenerationStats] = field(default_factory=list)


def _search_entropy(state: CemState) -> float:
    """Mean per-coordinate entropy of the search Gaussian, in scale units."""
    with np.errstate(divide="ignore"):
        return float(np.mean(0.5 * np.log(2.0 * math.pi * math.e * (state.std / state.scale)**2)))


def cem_train(env, net_config: NetConfig, config: CemConfig, params: MlpParams | None = None,
              on_generation=None) -> CemResult:
    """Run ``config.generations`` generations and return the best-so-far parameters.

    Rows use the PPO curve schema: ``mean_reward_norm`` is the population
    mean return, both loss columns hold the negated elite-mean return, and
    ``entropy`` is the mean per-coordinate entropy of the search Gaussian.
    """
    template = params if params is not None else init_params(net_config, config.seed)
    state = CemState.initial(template.flatten(), config, param_scale(net_config))
    result = CemResult(template.copy())
    if config.generations <= 0:
        return result
    rng = np.random.default_rng([config.seed, 3])
    objective = episode_objective(env, net_config, template)
    env_steps = episodes = 0
    for _ in range(config.generations):
        state, gs = cem_generation(state, objective, config, rng)
        env_steps += gs.env_steps
        episodes += gs.episodes
        row = TrainStats(gs.generation, env_steps, episodes, gs.population_mean,
                         -gs.elite_mean, 0.0, _search_entropy(state), -gs.elite_mean)
        result.stats.append(row)
        result.generations.append(gs)
        log.info("generation %d  elite %.3f  population %.3f", gs.generation, gs.elite_mean,
                 gs.population_mean)
        if on_generation is not None:
            on_generation(row, state)
    result.params = template.load_flat(state.best_params)
    return result
