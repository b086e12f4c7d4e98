"""treeswarm: decentralized robot-swarm deployment over a logical tree backbone.

The library simulates robots that spread from a connected cluster toward
distant targets while a logical tree built over the communication network
keeps the swarm connected. Two tree-formation strategies are provided:
outwards (spanning tree grown from the root, useless branches pruned) and
inwards (sparse tree grown from the workers toward the root).
"""

from .core import AlgorithmVariant, Params, Role, RobotId, Vec2, default_params, load_params, save_params, seeded_rng
from .metrics import RunSummary, fiedler_value, laplacian
from .scenario import Scenario, Simulation, run, sweep

__version__ = "0.1.0"

__all__ = [
    "AlgorithmVariant", "Params", "Role", "RobotId", "Vec2",
    "default_params", "load_params", "save_params", "seeded_rng",
    "RunSummary", "fiedler_value", "laplacian",
    "Scenario", "Simulation", "run", "sweep",
    "__version__",
]
