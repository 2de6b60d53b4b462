"""Episode orchestration, training, baseline, exports and the CLI."""
from .config import MODES, ConfigError, ScenarioConfig, load_config
from .episode import EpisodeRecord, HeatMap, run_episode

__all__ = ["MODES", "ConfigError", "ScenarioConfig", "load_config", "EpisodeRecord",
           "HeatMap", "run_episode"]
