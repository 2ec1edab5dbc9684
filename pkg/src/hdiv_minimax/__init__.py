"""Guaranteed (minimax) estimation of linear functionals of mixed elliptic
problems from indirect noisy observations, with RT0/P0 finite elements."""

__version__ = "0.1.0"

from .assembly import (
    CoefficientFields,
    PriorEllipsoid,
    SaddleBlocks,
    assemble_core_forms,
    assemble_functional_loads,
)
from .estimator import (
    EstimatorSolution,
    FunctionalSpec,
    StateReconstruction,
    estimate_with_sigma,
    evaluate_cost_I,
    evaluate_functional,
    solve_minimax_system,
    solve_rhs_minimax,
    solve_state_reconstruction,
)
from .femspace import HDivSpace, L2Space, build_spaces, interpolate_fields
from .forward import FieldPair, solve_forward, solve_saddle
from .mesh import Mesh, generate_unit_square, load_triangle_mesh, refine_uniform
from .observation import (
    Channel,
    ObservationData,
    ObservationSetup,
    apply_observation,
    check_admissibility,
    compose_tilde_kernels,
)
from .stochastic import (
    NoiseModel,
    monte_carlo_mse,
    sample_admissible_noise,
    worst_case_perturbations,
)
