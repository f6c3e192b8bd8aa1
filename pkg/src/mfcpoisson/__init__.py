"""Mean-field control with Poissonian common noise: simulation and verification."""

__version__ = "0.1.0"

from .coefficients import (  # noqa: F401
    AdjointTriplet,
    CoefficientSet,
    JumpSpec,
    LQParams,
    delta_hamiltonian_relaxed,
    delta_hamiltonian_strict,
    hamiltonian_relaxed,
    hamiltonian_strict,
    lq_coefficients,
)
from .lq import (  # noqa: F401
    RiccatiSolution,
    adjoint_ansatz,
    lq_value_evaluator,
    optimal_control,
    quadratic_minimizer,
    solve_riccati,
    value_function,
)
from .measures import (  # noqa: F401
    Box,
    ControlMeasure,
    EmpiricalMeasure,
    JointEmpiricalMeasure,
    SecondMoment,
    extend,
    fm_distance,
    kr_distance,
    project,
    second_moment,
)
from .simulate import (  # noqa: F401
    FeedbackRule,
    InitSpec,
    OpenLoopRule,
    ParticleCloud,
    PoissonPath,
    RelaxedRule,
    TimeGrid,
    chattering,
    estimate_cost,
    sample_poisson_path,
    simulate_relaxed,
    simulate_strict,
)
