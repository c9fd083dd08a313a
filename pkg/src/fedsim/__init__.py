"""Deterministic desk-scale simulator for synchronous federated learning
over feature-vector classification."""

from .engine import AlgorithmConfig, ExperimentConfig, run_experiment

__all__ = ["AlgorithmConfig", "ExperimentConfig", "run_experiment"]
__version__ = "0.1.0"
