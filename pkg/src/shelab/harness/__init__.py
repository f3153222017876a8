"""Campaign configuration, execution, persistence and the command line."""

from .campaigns import CampaignResult, aggregate, run_campaign
from .config import CAMPAIGNS, build_config, default_config, digest, load_toml, validate_config
from .io import RunExists, execute, read_replicas, recompute, run_dir

__all__ = ["CAMPAIGNS", "CampaignResult", "RunExists", "aggregate", "build_config", "default_config", "digest",
           "execute", "load_toml", "read_replicas", "recompute", "run_campaign", "run_dir", "validate_config"]
