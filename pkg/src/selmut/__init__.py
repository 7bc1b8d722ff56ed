"""Equilibria of a trait-structured population with mutation, selection and
local plus nonlocal dispersal on fragmented one-dimensional habitats.

Main entry points:

* :class:`ScenarioConfig` and the growth/kernel specs in :mod:`selmut.model`
* principal eigenvalues in :mod:`selmut.spectral`
* steady states in :mod:`selmut.equilibrium`
* small-mutation diagnostics in :mod:`selmut.asymptotics`
* the ``selmut`` command line in :mod:`selmut.cli`
"""

from .domain import SpatialDomain, build_spatial_grid, build_trait_grid
from .equilibrium import (
    ConstantInit,
    GaussianInit,
    LoadedInit,
    PopulationState,
    implicit_step,
    solve_equilibrium,
    step,
    total_density,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    DtTooLargeError,
    ModelError,
    PreconditionError,
    SelmutError,
)
from .model import (
    ConstantKernel,
    DetectConfig,
    GaussianFloorKernel,
    QuadraticSpace,
    QuadraticTrait,
    ScenarioConfig,
    SolverConfig,
    Tabulated,
)
from .spectral import principal_eigenpair_1d, principal_eigenvalue_2d

__version__ = "0.1.0"
