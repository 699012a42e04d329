"""Scattering compositional learner on procedurally generated matrix puzzles."""

from .model import ModelConfig, SCLModel, load_model, save_model, scatter

__version__ = "0.1.0"

__all__ = ["ModelConfig", "SCLModel", "save_model", "load_model", "scatter",
           "__version__"]
