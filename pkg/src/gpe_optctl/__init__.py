"""Optimal control of one-dimensional Gross-Pitaevskii condensates.

GRAPE (conjugate gradient or BFGS, L2 or H1 search directions) and
Krotov optimizers on top of a norm-preserving split-step propagator with
an exact discrete adjoint.
"""

from .grid import (
    ControlField,
    GridMismatchError,
    PhysicalParams,
    Role,
    SpatialGrid,
    TimeGrid,
    WaveFunction,
    fidelity_overlap,
    inner_product,
    power_spectrum,
    spectral_bandwidth,
)
from .potentials import PotentialFamily, d2_dlambda2, d_dlambda, evaluate
from .dynamics import (
    EquationCounter,
    NormDriftError,
    PropagatorConfig,
    SplitStepPropagator,
    StationaryStateError,
    Trajectory,
    adjoint_terminal_condition,
    excited_state,
    ground_state,
    propagate_adjoint,
    propagate_backward,
    propagate_forward,
)
from .functionals import GrapeCostParams, KrotovCostParams, make_shape, terminal_cost
from .problem import ControlProblem
from .trace import RunTrace
from .grape import GrapeConfig, LineSearchConfig, gradient_H1, gradient_L2, optimize_grape
from .krotov import (
    AdaptiveK,
    KrotovConfig,
    krotov_update_explicit,
    krotov_update_newton,
    optimize_hybrid,
    optimize_krotov,
)
from .harness import (
    ConfigError,
    GuessSpec,
    ProblemSpec,
    build_problem,
    export_results,
    preset,
    resolve_config,
    run_experiment,
    spectral_history,
)

__version__ = "0.1.0"
