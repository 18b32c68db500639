"""Total Lagrangian SPH solver for deformable solids with hyperelasticity,
finite-strain J2 plasticity and hyperbolic phase-field brittle fracture."""

__version__ = "0.1.0"

from .core import (Body, BoundaryCondition, CaseConfig, CaseError,
                   KernelKind, MaterialParams, Model, ParticleArrays,
                   SimulationError, StepAlgorithm,
                   normalize_elastic_constants)
from .stepper import Simulation, stable_dt

__all__ = [
    "Body", "BoundaryCondition", "CaseConfig", "CaseError", "KernelKind",
    "MaterialParams", "Model", "ParticleArrays", "SimulationError",
    "Simulation", "StepAlgorithm", "normalize_elastic_constants",
    "stable_dt",
]
