"""Bisimulation for continuous-time Feller-Dynkin processes and finite
labelled Markov processes."""

from .core import CEMETERY, DomainError, EstimateWithCI, FinitePartition, SymmetryGroup, relation_related

__all__ = ["CEMETERY", "DomainError", "EstimateWithCI", "FinitePartition", "SymmetryGroup", "relation_related"]
__version__ = "0.1.0"
