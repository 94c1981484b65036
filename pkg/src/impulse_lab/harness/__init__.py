"""Scenario configs, the runner and the command line."""
from .config import Scenario, dump_config, parse_config, parse_text
from .runner import RunReport, run

__all__ = ["Scenario", "RunReport", "parse_config", "parse_text", "dump_config", "run"]
