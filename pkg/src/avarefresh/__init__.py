"""Simulation, metrics and PPO training for capacity-aware status updates in compute-first networks."""

__version__ = "0.1.0"
