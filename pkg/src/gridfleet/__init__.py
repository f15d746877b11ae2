"""Coupled electric-fleet scheduling / power-grid pricing equilibrium solver."""

__version__ = "0.1.0"

from .scenario import (  # noqa: F401
    Scenario,
    ScenarioError,
    load_scenario,
    save_scenario,
    synth_scenario,
    bundled_scenario_path,
)
from .anderson import AAConfig, AATrace, aa_solve, ELO_PRESET, EQN_PRESET  # noqa: F401
