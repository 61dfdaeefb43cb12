"""Fast diffusion and transport on network edges and their lumped (aggregated) limits."""

from .core import (
    GridFunction,
    expm,
    grid_nodes,
    integrate_edge,
    matrix_exponential_apply,
    matrix_power,
    matrix_power_apply,
    norm_l1,
    norm_sup,
    project_average,
)
from .coupling import (
    DiffusionCoupling,
    EdgeExchangeRates,
    NoConvergenceError,
    NotStochasticError,
    PerronError,
    ReducibleMatrixError,
    TransportCoupling,
    adjoint_coupling,
    aggregated_matrix,
    auxiliary_sums,
    check_diffusion_positivity,
    check_markov_conditions,
    coupling_from_rates,
    kolmogorov_check,
    kolmogorov_null_vector,
    lumped_density_matrix,
    perron_vector,
)
from .diffusion import (
    DiffusionProblem,
    NumericalError,
    Trajectory,
    boundary_lift,
    mass_balance_residual,
    solve_diffusion,
)
from .lumping import (
    ConvergenceReport,
    CosineLayer,
    DiffusionExpansion,
    LayerExpansion,
    TransportExpansion,
    aggregated_solution_diffusion,
    aggregated_solution_transport,
    assemble_expansion,
    corrector_diffusion,
    corrector_transport,
    error_norms,
    estimate_order,
    expansion_components,
    initial_layer_diffusion,
    initial_layer_transport,
)
from .mckendrick import (
    ConsistencyError,
    PopulationTrajectory,
    StructuredPopulation,
    aggregate_vital_rates,
    aggregation_gap,
    solve_aggregated_mckendrick,
    solve_structured,
)
from .transport import (
    TransportProblem,
    projected_exact,
    stochastic_decomposition,
    stochastic_transport_problem,
    transport_exact,
    transport_upwind,
)

__version__ = "0.1.0"
