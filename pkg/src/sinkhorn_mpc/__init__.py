"""Entropy-regularized optimal transport coupled with minimum-energy MPC
for steering N controllable linear agents to a target empirical
distribution, with diagnostics for convergence and boundedness.
"""

from .entropic_ot import (
    Assignment,
    GibbsKernel,
    ScalingState,
    SinkhornResult,
    barycentric_projection,
    coupling_from_scalings,
    entropic_cost,
    entropy,
    exact_assignment,
    gibbs_kernel,
    marginal_violation,
    sinkhorn_partial,
    sinkhorn_solve,
    sinkhorn_step,
    transport_objective,
)
from .errors import (
    DivergenceError,
    InfeasibleTargetError,
    InvalidArgumentError,
    NearSingularGramianError,
    NonConvergenceError,
    NumericRangeError,
    SinkhornMpcError,
)
from .lti import (
    AgentGains,
    ContinuousAgent,
    DiscreteAgent,
    TargetSet,
    build_target_set,
    continuous_gramian,
    equilibrium_input,
    kappa_bound,
    matrix_exponential,
    reachability_gramian,
    spectral_radius,
    zoh_discretize,
)
from .mpc import (
    MinEnergySolution,
    MpcLaw,
    make_mpc_law,
    min_energy_oracle,
    min_energy_oracle_continuous,
    mpc_input,
    transport_cost,
    ubar_of_coupling,
)
from .sim import (
    LyapunovReport,
    SimConfig,
    Trajectory,
    UltimateBoundCert,
    accumulated_cost,
    lyapunov_series,
    simulate_continuous,
    simulate_sinkhorn_mpc,
    simulate_unregularized_mpc,
    stationarity_residual,
    ultimate_bound_certificate,
)

__version__ = "0.1.0"
