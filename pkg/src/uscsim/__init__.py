"""Simulation toolkit for an ultrastrongly coupled qubit-cavity system read out
through a driven, lossy Kerr resonator."""
from ._version import __version__
from .errors import NumericalError, ScenarioError, UscsimError
from .models import RabiParams, ResonatorParams, TwoLevelParams, UscLossParams
from .scenarios import Scenario, load_preset, run_scenario

__all__ = [
    "__version__",
    "NumericalError",
    "ScenarioError",
    "UscsimError",
    "RabiParams",
    "ResonatorParams",
    "TwoLevelParams",
    "UscLossParams",
    "Scenario",
    "load_preset",
    "run_scenario",
]
