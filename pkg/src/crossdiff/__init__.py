"""Structure-preserving finite-volume simulation of reaction cross-diffusion systems."""

from .amap import InversionSettings, invert_A, invert_A_batch
from .errors import (
    ConfigError,
    CrossDiffError,
    DiagnosticViolation,
    DomainError,
    InsufficientDataError,
    InversionError,
    StepError,
    StructureError,
    UnsupportedReactionError,
)
from .grid import Field, Mesh, neumann_laplacian
from .model import EntropySpec, ModelSpec, PressureLaw, ReactionLaw, entropy_reaction_bound, power_model
from .stepper import SolverSettings, TimeGrid, run, step
from .structure import build_entropy, certify, detailed_balance, find_detailed_balance

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CrossDiffError",
    "DiagnosticViolation",
    "DomainError",
    "EntropySpec",
    "Field",
    "InsufficientDataError",
    "InversionError",
    "InversionSettings",
    "Mesh",
    "ModelSpec",
    "PressureLaw",
    "ReactionLaw",
    "SolverSettings",
    "StepError",
    "StructureError",
    "TimeGrid",
    "UnsupportedReactionError",
    "build_entropy",
    "certify",
    "detailed_balance",
    "entropy_reaction_bound",
    "find_detailed_balance",
    "invert_A",
    "invert_A_batch",
    "neumann_laplacian",
    "power_model",
    "run",
    "step",
]
