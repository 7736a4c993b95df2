"""Catalytic branching random walks on Z^d: growth rates, front shape and front fluctuations."""
from .lattice_walk import JumpKernel, validate_kernel, nearest_neighbour_kernel, cumulant
from .branching_model import (
    OffspringLaw, Catalyst, CbrwModel, validate_model, model_from_config, model_a, model_b, model_2d,
)

__version__ = "0.1.0"
