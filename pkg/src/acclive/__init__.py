"""Deterministic simulator for an accountably-live BFT protocol."""

from .accountability import AccountabilitySettings, PsiParams, psi
from .analysis import achievable_ident, converse_ident_upper, frontier_table, k_views_for
from .config import ConfigError, ScenarioConfig, config_from_dict, load_config
from .harness import RunReport, build_world, run_scenario
from .netsim import NetParams, Schedule, SignatureForgery, Trace, World, run_simulation, validate_x_psync

__all__ = [
    "AccountabilitySettings",
    "ConfigError",
    "NetParams",
    "PsiParams",
    "RunReport",
    "ScenarioConfig",
    "Schedule",
    "SignatureForgery",
    "Trace",
    "World",
    "achievable_ident",
    "build_world",
    "config_from_dict",
    "converse_ident_upper",
    "frontier_table",
    "k_views_for",
    "load_config",
    "psi",
    "run_scenario",
    "run_simulation",
    "validate_x_psync",
]
