"""Fixed-point solvers and diagnostics for backward stochastic equations on finite event trees."""

__version__ = "0.1.0"

from .filtered_space import (
    AdaptedProcess,
    FiniteFilteredSpace,
    Martingale,
    RandomVector,
    TimeGrid,
    cond_expect,
    doob_ratio,
    lift,
    lp_norm,
    martingale_from_terminal,
    sp_norm,
    space_from_json,
    space_to_json,
)
from .gauss import (
    CylindricalFunction,
    GaussianCoordinateModel,
    build_gaussian_model,
    compactness_diagnostic,
    directional_derivative,
    lemma_lip_construct,
    omega_lipschitz_estimate,
    poincare_check,
    sobolev_norm,
    white_noise,
)
from .generators import (
    DelayedConvolution,
    DriverContext,
    DriverLipschitzProfile,
    FunctionalF,
    Generator,
    IntegralDriver,
    SplitF,
    delayed_convolution_F,
    estimate_lipschitz,
    evaluate_F,
    meanfield_driver,
    quadratic_meanfield,
)
from .laws import DiscreteLaw, empirical_law, law_from_values, wasserstein2
from .noise import (
    BrownianTreeModel,
    NoiseModel,
    PoissonMarkModel,
    build_brownian_tree,
    build_jump_diffusion_tree,
    one_step_regressors,
)
from .representation import (
    MartingaleDecomposition,
    decomposition_to_csv,
    h2_norm,
    isometry_check,
    l2_compensated_norm,
    represent,
    zu_processes,
)
from .solver import (
    SolverConfig,
    SolverReport,
    anticipating_window_bound,
    block_solve,
    bse_residual,
    contraction_constant,
    g0_map,
    g_lipschitz_bound,
    g_map,
    mann_solve,
    picard_solve,
    pi_map,
    prop_genbsde_bound,
    solve_condition_s,
    verify_uniqueness,
)
