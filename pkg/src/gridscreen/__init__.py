"""Dynamic contingency screening for power grids.

gridscreen simulates the linearized swing dynamics of a transmission grid
under single line faults with multiplicative noise, measures cumulative
branch overloads, and estimates rare overload probabilities with Monte
Carlo and cross-entropy importance sampling. A screening sweep over every
branch produces a ranked risk report served over HTTP and a CLI.
"""

__version__ = "0.1.0"

from .grid import (
    Branch,
    Bus,
    Grid,
    GridError,
    CaseParseError,
    TopologyError,
    UnknownBusError,
    BalanceError,
    build_laplacian,
    equilibrium_angles,
    grid_to_json,
    load_grid,
    parse_grid_json,
    parse_matpower_case,
)
from .config import ConfigError, RunConfig, load_config, make_config
from .dynamics import (
    DynamicsError,
    StateSpace,
    Trajectory,
    assemble,
    moment_evolution,
    propagate_deterministic,
    propagate_euler_maruyama,
    propagate_stochastic,
)
from .overload import (
    SafetyPolicy,
    flow_ratios,
    global_overload,
    line_overload_times,
    risk_classify,
)
from .scenarios import (
    DiscreteDurations,
    ExponentialDurations,
    ScenarioDistribution,
    ScenarioError,
    likelihood_ratios,
    nominal_distribution,
)
from .rare import (
    CEParams,
    DegenerateEliteError,
    EstimatorError,
    EstimatorResult,
    cross_entropy_optimize,
    estimate_overload_probability,
    importance_sample,
    monte_carlo,
)
from .sweep import ScenarioBatchEvaluator, SweepError, SweepResult
from .screening import (
    RiskReport,
    ScreeningError,
    emit_report,
    load_report,
    run_screening,
)

__all__ = [
    "__version__",
    "Branch",
    "Bus",
    "Grid",
    "GridError",
    "CaseParseError",
    "TopologyError",
    "UnknownBusError",
    "BalanceError",
    "build_laplacian",
    "equilibrium_angles",
    "grid_to_json",
    "load_grid",
    "parse_grid_json",
    "parse_matpower_case",
    "ConfigError",
    "RunConfig",
    "load_config",
    "make_config",
    "DynamicsError",
    "StateSpace",
    "Trajectory",
    "assemble",
    "moment_evolution",
    "propagate_deterministic",
    "propagate_euler_maruyama",
    "propagate_stochastic",
    "SafetyPolicy",
    "flow_ratios",
    "global_overload",
    "line_overload_times",
    "risk_classify",
    "DiscreteDurations",
    "ExponentialDurations",
    "ScenarioDistribution",
    "ScenarioError",
    "likelihood_ratios",
    "nominal_distribution",
    "CEParams",
    "DegenerateEliteError",
    "EstimatorError",
    "EstimatorResult",
    "cross_entropy_optimize",
    "estimate_overload_probability",
    "importance_sample",
    "monte_carlo",
    "ScenarioBatchEvaluator",
    "SweepError",
    "SweepResult",
    "RiskReport",
    "ScreeningError",
    "emit_report",
    "load_report",
    "run_screening",
]
