"""Variable-sampling model predictive control with a storage case study."""

from .timewarp import (
    EPS_BETA,
    HorizonGrid,
    WarpConstraintError,
    WarpParams,
    warp_eval,
    warp_feasibility_residuals,
    warp_intervals,
)
from .discretize import (
    DynamicsModel,
    IntegrationError,
    check_rhs_jacobians,
    euler_step,
    rollout,
)
from .nlpsolver import (
    STATUS_CONVERGED,
    STATUS_INFEASIBLE,
    STATUS_MAX_ITER,
    FiniteDifferenceError,
    NlpProblem,
    SolveOptions,
    SolveResult,
    finite_diff_gradient,
    solve,
)
from .ocp import (
    AssemblyError,
    EvalContext,
    HorizonGuardError,
    OcpSpec,
    PathPartials,
    StagePartials,
    assemble,
    objective_average,
)
from .bess import (
    BessParams,
    CostBreakdown,
    PowerLimitDomainError,
    WindModel,
    bess_prediction_model,
    build_bess_ocp,
    power_limits,
    predicted_stage_cost,
    read_wind_trace,
    realized_cost,
    smooth_abs,
    smooth_plus,
    soc_derivative,
    write_wind_trace,
)
from .controllers import (
    ControlSchedule,
    ControllerState,
    heuristic_step,
    uniform_mpc_step,
    vsmpc_step,
)
from .simulator import (
    RevenueTable,
    ScenarioConfig,
    SimLog,
    SimulationAbort,
    StepRecord,
    read_simlog_records,
    revenue_table,
    run_scenario,
    write_simlog,
)

__version__ = "0.1.0"
