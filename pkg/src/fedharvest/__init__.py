"""Deterministic simulator of energy-harvesting federated learning.

Clients charge batteries from a Bernoulli harvest, pay kappa units to train
for kappa slots and one unit to upload, and a version-age-ranked server picks
which k clients train each round. Three reference policies (greedy, cyclic,
cyclic-odd) share the same slot loop and metric schema for paired comparison.
"""

from .config import Config, ConfigError, PRESETS, build_config
from .timeline import RunArtifacts, SimulationRun, run_to_completion

__version__ = "0.1.0"

__all__ = [
    "Config",
    "ConfigError",
    "PRESETS",
    "build_config",
    "RunArtifacts",
    "SimulationRun",
    "run_to_completion",
    "__version__",
]
