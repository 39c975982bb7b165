"""Highway lane-keeping and overtaking with PPO, a noisy CEM baseline and IDM+MOBIL traffic."""
from .env import PRESETS, HighwayEnv, ScenarioConfig, preset
from .policy_net import NetConfig, init_params
from .ppo import PpoConfig, train

__all__ = ["HighwayEnv", "NetConfig", "PRESETS", "PpoConfig", "ScenarioConfig", "init_params",
           "preset", "train"]
__version__ = "0.1.0"
