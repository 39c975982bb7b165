"""Experiment runner: configuration files, training, evaluation and CSV output.

A run configuration is a flat text file of ``section.key = value`` lines, for
example::

    run.scenario = default
    ppo.iterations = 200
    net.hidden_layers = 64, 64
    env.speed_penalty = absolute

Sections are ``run``, ``env``, ``net``, ``ppo`` and ``cem``; every key has a
default, so an empty file is valid.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cem as cem_mod
from . import ppo as ppo_mod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .env import AGENT, PRESETS, REFERENCE, HighwayEnv, ScenarioConfig, ScenarioError
from .policy_net import MlpParams, NetConfig, forward, init_params, mean_action

log = logging.getLogger(__name__)

ALGOS = ("ppo", "cem", "reference")
TRAIN_COLUMNS = ppo_mod.TrainStats.columns()
EVAL_COLUMNS = ["episode", "seed", "steps", "collided", "success", "return_norm",
                "mean_speed", "distance"]
ADAPT_COLUMNS = ["scenario", *EVAL_COLUMNS]
ADAPT_SCENARIOS = ("adapt1", "adapt2")


class UsageError(ValueError):
    """Bad command-line or configuration input."""


@dataclass
class RunConfig:
    scenario: str = "default"
    algo: str = "ppo"
    seed: int = 0
    episodes: int = 100
    out: str = "runs/default"
    env: dict = field(default_factory=dict)   # overrides applied on top of the preset
    net: NetConfig = field(default_factory=NetConfig)
    ppo: ppo_mod.PpoConfig = field(default_factory=ppo_mod.PpoConfig)
    cem: cem_mod.CemConfig = field(default_factory=cem_mod.CemConfig)
    # None: match CEM's interaction budget to PPO's
    cem_generations: int | None = None

    def scenario_config(self, name: str | None = None) -> ScenarioConfig:
        name = self.scenario if name is None else name
        if name not in PRESETS:
            raise UsageError(f"unknown scenario {name!r}; choose from {sorted(PRESETS)}")
        try:
            return dataclasses.replace(PRESETS[name], **self.env)
        except (TypeError, ScenarioError) as exc:
            raise UsageError(f"invalid env settings: {exc}") from exc

    def validate(self) -> None:
        if self.algo not in ALGOS:
            raise UsageError(f"unknown algorithm {self.algo!r}; choose from {ALGOS}")
        self.scenario_config()

    def ppo_config(self) -> ppo_mod.PpoConfig:
        return dataclasses.replace(self.ppo, seed=self.seed)

    def cem_config(self) -> cem_mod.CemConfig:
        gens = self.cem_generations
        if gens is None:
            gens = cem_mod.matched_generations(self.ppo, self.cem,
                                               self.scenario_config().max_decisions)
        return dataclasses.replace(self.cem, generations=gens, seed=self.seed)


# --- config file --------------------------------------------------------------


def _convert(text: str, default, name: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return None if text.lower() == "none" else float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in text.replace("(", "").replace(")", "").split(",")
                         if p.strip())
        return text
    except ValueError as exc:
        raise UsageError(f"bad value {text!r} for {name}") from exc


def _field_defaults(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    sections = {"net": {}, "ppo": {}, "cem": {}, "env": dict(cfg.env)}
    env_defaults = {k: v for k, v in _field_defaults(ScenarioConfig).items()
                    if not dataclasses.is_dataclass(v)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise UsageError(f"line {lineno}: expected 'section.key = value'")
        if section == "run":
            defaults = {"scenario": "default", "algo": "ppo", "seed": 0, "episodes": 100,
                        "out": "runs/default"}
            if name not in defaults:
                raise UsageError(f"line {lineno}: unknown key run.{name}")
            setattr(cfg, name, _convert(value, defaults[name], key))
        elif section == "cem" and name == "generations":
            cfg.cem_generations = _convert(value, 0, key)
        elif section in ("net", "ppo", "cem", "env"):
            defaults = env_defaults if section == "env" else _field_defaults(
                type(getattr(cfg, section)))
            if name not in defaults or name == "seed":
                raise UsageError(f"line {lineno}: unknown key {section}.{name}")
            sections[section][name] = _convert(value, defaults[name], key)
        else:
            raise UsageError(f"line {lineno}: unknown section {section!r}")
    try:
        cfg.net = dataclasses.replace(cfg.net, **sections["net"])
        cfg.ppo = dataclasses.replace(cfg.ppo, **sections["ppo"])
        cfg.cem = dataclasses.replace(cfg.cem, **sections["cem"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cfg.env = sections["env"]
    return cfg


def load_config(path: str | Path | None, base: RunConfig | None = None) -> RunConfig:
    if path is None:
        return dataclasses.replace(base) if base is not None else RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base)


# --- CSV ----------------------------------------------------------------------


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_csv(path: str | Path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row[c] for c in columns]
            writer.writerow([_cell(v) for v in row])
    return path


def _parse_cell(text: str):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# --- seeds --------------------------------------------------------------------


def derived_seed(*keys: int) -> int:
    """Independent 63-bit seed for a tuple of integer keys."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1, np.uint64)[0] >> 1)


def eval_seed(master: int, episode: int) -> int:
    return derived_seed(master, 7, episode)


# --- training -----------------------------------------------------------------


@dataclass
class TrainingOutput:
    checkpoint: Path
    curve: Path
    returns: Path
    params: MlpParams
    stats: list


def run_training(cfg: RunConfig) -> TrainingOutput:
    """Train PPO or CEM; writes train_curve.csv, episode_returns.csv, checkpoint.json."""
    cfg.validate()
    if cfg.algo == "reference":
        raise UsageError("the reference controller has nothing to train")
    scenario = cfg.scenario_config()
    out = Path(cfg.out)
    params = init_params(cfg.net, cfg.seed)
    if cfg.algo == "ppo":
        pc = cfg.ppo_config()
        result = ppo_mod.train(
            lambda i: HighwayEnv(scenario, seed=derived_seed(cfg.seed, 1, i)),
            cfg.net, pc, params=params)
        returns = result.episode_returns
        configs = {"ppo": dataclasses.asdict(pc)}
    else:
        cc = cfg.cem_config()
        result = cem_mod.cem_train(HighwayEnv(scenario, seed=derived_seed(cfg.seed, 1, 0)),
                                   cfg.net, cc, params=params)
        returns = [g.elite_mean for g in result.generations]
        configs = {"cem": dataclasses.asdict(cc)}
    configs["env"] = {k: v for k, v in cfg.env.items()}
    curve = write_csv(out / "train_curve.csv", TRAIN_COLUMNS,
                      [dataclasses.asdict(s) for s in result.stats])
    ret_path = write_csv(out / "episode_returns.csv", ["episode", "return_norm"],
                         list(enumerate(returns)))
    ckpt = save_checkpoint(out / "checkpoint.json",
                           Checkpoint(result.params, cfg.net, cfg.scenario, cfg.algo,
                                      {"master": cfg.seed}, configs))
    return TrainingOutput(ckpt, curve, ret_path, result.params, result.stats)


# --- evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class EvalSummary:
    episodes: int
    collision_rate: float
    success_rate: float
    mean_return: float
    mean_speed: float
    mean_distance: float

    @classmethod
    def from_rows(cls, rows: list[dict]) -> EvalSummary:
        if not rows:
            raise UsageError("cannot summarise an empty evaluation")
        col = lambda k: float(np.mean([r[k] for r in rows]))  # noqa: E731
        return cls(len(rows), col("collided"), col("success"), col("return_norm"),
                   col("mean_speed"), col("distance"))


def run_episode(env: HighwayEnv, seed: int, params: MlpParams | None,
                net: NetConfig | None) -> dict:
    """One greedy episode; ``params=None`` lets the scripted reference drive."""
    obs = env.reset(seed=seed)
    done = False
    steps, total, speed = 0, 0.0, 0.0
    info = {}
    while not done:
        action = None if params is None else mean_action(forward(params, obs), net)
        obs, r, done, info = env.step(action)
        steps += 1
        total += r
        speed += float(env.world.v[0])
    return {"seed": seed, "steps": steps,
            "collided": int(info["collided"] or info["off_road"]),
            "success": int(info["success"]), "return_norm": total,
            "mean_speed": speed / steps, "distance": float(env.world.x[0])}


def evaluate(scenario: ScenarioConfig, params: MlpParams | None, net: NetConfig | None,
             episodes: int, seed: int) -> list[dict]:
    if episodes <= 0:
        raise UsageError("episodes must be positive")
    env = HighwayEnv(scenario, ego_mode=REFERENCE if params is None else AGENT)
    rows = []
    for k in range(episodes):
        row = run_episode(env, eval_seed(seed, k), params, net)
        rows.append({"episode": k, **row})
    return rows


def _policy(cfg: RunConfig, checkpoint):
    if cfg.algo == "reference":
        return None, None
    if checkpoint is None:
        raise UsageError(f"--checkpoint is required to evaluate {cfg.algo}")
    ckpt = load_checkpoint(checkpoint)
    return ckpt.params, ckpt.net_config


def run_evaluation(cfg: RunConfig, checkpoint: str | Path | None = None) -> EvalSummary:
    """Greedy evaluation; writes eval_episodes.csv and summary.json under ``cfg.out``."""
    cfg.validate()
    if cfg.episodes <= 0:
        raise UsageError("episodes must be positive")
    params, net = _policy(cfg, checkpoint)
    rows = evaluate(cfg.scenario_config(), params, net, cfg.episodes, cfg.seed)
    out = Path(cfg.out)
    write_csv(out / "eval_episodes.csv", EVAL_COLUMNS, rows)
    summary = EvalSummary.from_rows(rows)
    (out / "summary.json").write_text(json.dumps(dataclasses.asdict(summary), indent=1) + "\n")
    return summary


def run_adaptability(cfg: RunConfig, checkpoint: str | Path | None = None,
                     episodes: int = 10) -> dict[str, list[float]]:
    """Evaluate on both adaptability presets; writes adaptability.csv."""
    cfg.validate()
    params, net = _policy(cfg, checkpoint)
    rows, series = [], {}
    for name in ADAPT_SCENARIOS:
        res = evaluate(cfg.scenario_config(name), params, net, episodes, cfg.seed)
        rows += [{"scenario": name, **r} for r in res]
        series[name] = [r["return_norm"] for r in res]
    write_csv(Path(cfg.out) / "adaptability.csv", ADAPT_COLUMNS, rows)
    return series


def learning_trend(returns, fraction: float = 0.1) -> tuple[float, float]:
    """Mean return of the first and last ``fraction`` of episodes."""
    returns = np.asarray(returns, dtype=np.float64)
    k = max(1, math.floor(returns.size * fraction))
    if returns.size == 0:
        raise ValueError("no episodes")
    return float(returns[:k].mean()), float(returns[-k:].mean())
