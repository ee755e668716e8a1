"""Bundled deterministic meta-domain: world state, validator, scenarios."""

from .scenarios import BUNDLED_PACK, ReferenceSolution, ScenarioPack, describe, load_pack
from .validator import StateExecutor, check_goal, validate
from .world import MiniWorld, WorldState

__all__ = [
    "BUNDLED_PACK",
    "MiniWorld",
    "ReferenceSolution",
    "ScenarioPack",
    "StateExecutor",
    "WorldState",
    "check_goal",
    "describe",
    "load_pack",
    "validate",
]
