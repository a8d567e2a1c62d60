"""Content-caching vehicular edge computing: simulator, learners, experiments."""

__version__ = "0.1.0"

from . import config, env, experiments, graph, nn, taskcache, trainer, world

__all__ = ["config", "env", "experiments", "graph", "nn", "taskcache",
           "trainer", "world", "__version__"]
