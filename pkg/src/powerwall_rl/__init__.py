"""Battery dispatch for a dairy farm: PPO against Q-learning and rule baselines."""

from .config import ExperimentConfig, load_config
from .data import YearSeries, generate_synthetic, load_csv, split
from .env import Action, EnvConfig, FarmEnv

__all__ = ["Action", "EnvConfig", "ExperimentConfig", "FarmEnv", "YearSeries",
           "generate_synthetic", "load_config", "load_csv", "split"]
__version__ = "0.1.0"
