"""Kaluza-Klein reduction of Brownian motion on principal bundles with homogeneous fibers.

The package simulates the diffusion generated by the Laplace-Beltrami
operator of a Kaluza-Klein metric on ``M x G/H`` and evaluates the associated
semigroup in two ways: by simulating the full bundle process, and by the
factorized form in which the fiber dependence is carried by time-ordered
matrix exponentials (filters) in unitary irreps, driven by base paths only.

Modules
-------
``lie_algebra``     structure constants, decomposition ``g = h + khat + lbar``, validation
``coset_geometry``  exponential chart on ``G/H``, Maurer-Cartan frames, Killing vectors
``bundle_model``    base metric, connection, fiber metric and the assembled KK metric
``representation``  irreps, spherical rows, Peter-Weyl coefficient fields
``sde``             Stratonovich Heun integrator for base and bundle processes
``filtering``       reduced generator and filter matrices
``estimator``       Monte Carlo estimators and their comparison
``checks``          identity suites used by ``kkreduce check``
``cli``             command-line interface
"""

from .errors import *  # noqa: F401,F403
from .kernels import available_backends, backend, use_backend
from .lie_algebra import (
    CheckResult,
    LieAlgebraSpec,
    ValidationReport,
    group_exp,
    su2_generators,
    su3_generators,
    validate_decomposition,
)
from .coset_geometry import CosetChart, CosetFrame, frame_at, frame_batch, recenter
from .bundle_model import BaseChart, BundleModel, ConnectionField, HorizontalAlgebraMetric
from .representation import (
    CoefficientField,
    IrrepSpec,
    PeterWeylCoefficients,
    adjoint_irrep,
    faithful_irrep,
    make_irrep,
    spin_irrep,
    trivial_irrep,
)
from .sde import NoiseSource, SimulationParams, simulate_base, simulate_full
from .filtering import FilterMatrix, ReducedGenerator, ordered_exponential, reduced_generator_apply
from .estimator import Potential, SemigroupEstimate, compare, estimate_full, estimate_reduced
from .config import Instance, RunConfig, load_instance, load_run_config

__version__ = "0.1.0"
