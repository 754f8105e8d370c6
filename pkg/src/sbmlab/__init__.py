"""Simulation and numerical verification lab for super-Brownian motion
with super-Brownian immigration (SBMSBI).

The package has six parts:

* ``radial``     -- radial test functions, grids, Lebesgue/cloud pairings
* ``semigroup``  -- heat kernel, semigroup action, Green pairing, kernel estimates
* ``mild``       -- Duhamel mild-equation solvers and Laplace-functional exponents
* ``particles``  -- branching-particle approximation of the environment and the
                    immigration process
* ``moments``    -- deterministic occupation-moment formulas and CLT variance targets
* ``experiments``-- seeded experiment orchestration, statistics, reports
"""

from sbmlab.radial import (
    RadialTestFunction,
    RadialGrid,
    LebesgueBoxMeasure,
    gaussian_test_function,
    lebesgue_pairing,
    cloud_pairing,
)
from sbmlab.semigroup import (
    SemigroupQuadrature,
    heat_kernel,
    apply_semigroup,
    pairing_f_St_f,
    green_pairing,
)
from sbmlab.mild import (
    SolverConfig,
    SpaceTimeField,
    scaling_norm,
    solve_v,
    solve_u,
)
from sbmlab.particles import SimConfig, ParticleCloud, EnvironmentTrajectory

__all__ = [
    "RadialTestFunction",
    "RadialGrid",
    "LebesgueBoxMeasure",
    "gaussian_test_function",
    "lebesgue_pairing",
    "cloud_pairing",
    "SemigroupQuadrature",
    "heat_kernel",
    "apply_semigroup",
    "pairing_f_St_f",
    "green_pairing",
    "SolverConfig",
    "SpaceTimeField",
    "scaling_norm",
    "solve_v",
    "solve_u",
    "SimConfig",
    "ParticleCloud",
    "EnvironmentTrajectory",
]

__version__ = "0.1.0"
