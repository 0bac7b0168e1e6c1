"""Null and multiplicative controllability tools for 1D quasilinear parabolic equations."""

from .carleman import (
    CarlemanWeights,
    PsiFunction,
    build_weights,
    construct_psi,
    observability_probe,
    weighted_control_norm,
)
from .estimates import (
    DecayReport,
    GNConstant,
    gn_sampler,
    h1_decay_report,
    linf_decay_report,
    max_modulus_bound,
    regularity_ratio,
    smallness_times,
)
from .mult_control import (
    MultPipelineResult,
    ReactionSpec,
    TimeOptimalParams,
    admissible_check,
    synthesize_multiplicative,
    theorem1_pipeline,
    time_optimal_search,
)
from .null_control import (
    ControlSchedule,
    CostReport,
    FixedPointParams,
    PenaltyParams,
    cost_report,
    fixed_point_null_control,
    solve_lq_penalized,
    staged_control,
)
from .pde_core import (
    DiffusionSpec,
    Grid,
    SourceField,
    Trajectory,
    build_diffusion_spec,
    solve_adjoint,
    solve_forward,
    solve_forward_kirchhoff,
    step_implicit,
)
from .scenario import Scenario, load_scenario, save_scenario

__version__ = "0.1.0"
