from .commands import RunReport, cmd_classify, cmd_denoise, cmd_stats, cmd_verify, run
from .config import ExperimentConfig, load_config, parse_config

__all__ = ["ExperimentConfig", "RunReport", "cmd_classify", "cmd_denoise", "cmd_stats",
           "cmd_verify", "load_config", "parse_config", "run"]
