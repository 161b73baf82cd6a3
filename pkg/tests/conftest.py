import functools
import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


@pytest.fixture
def scenario_dir():
    return SCENARIOS


@functools.lru_cache(maxsize=None)
def scenario_run(name: str, horizon: int | None = None):
    """Run a bundled scenario once per session and share the result."""
    from acclive import load_config, run_scenario

    cfg = load_config(SCENARIOS / f"{name}.json").with_overrides(horizon=horizon)
    world, report = run_scenario(cfg)
    return cfg, world, report
