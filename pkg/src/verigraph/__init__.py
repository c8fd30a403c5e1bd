"""Scene-graph plan verification: simulator, planners, iterative loop, metrics."""

__version__ = "0.1.0"
