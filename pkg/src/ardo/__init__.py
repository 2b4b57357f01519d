"""Adversarial solution of Fokker-Planck-type PDEs without differentiating
the solution network: every differential or difference operator lands on the
test function, and the solution enters the loss through pointwise values only.
"""

from .checks import (
    CheckResult,
    run_gradient_suite,
    run_identity_suite,
    run_scaling_suite,
)
from .config import RunSpec, load_config, parse_config_text, resolve
from .errors import ConfigError, DivergenceError
from .estimator import (
    Batch,
    LossEstimate,
    SamplingCheck,
    StepParams,
    boundary_directional_difference,
    check_sampling_condition,
    estimate_interior,
    estimate_loss,
    euler_step,
    generator_difference,
    sample_batch,
)
from .geometry import BoundaryPoint, BoundarySample, Domain
from .networks import (
    AdamState,
    DirichletMask,
    MaskedTestFunction,
    MlpNetwork,
    adam_step,
    masked_test_function,
)
from .oracle import (
    GeneratorRow,
    QuadratureGrid,
    VarianceRow,
    generator_consistency_experiment,
    tensor_grid,
    variance_scaling_experiment,
    weakform_quadrature,
)
from .problems import (
    PdeProblem,
    builtin_problem,
    builtin_problem_names,
    pde_residual,
)
from .solver import ArdoSolver
from .training import (
    RunMetrics,
    TrainConfig,
    TrainResult,
    evaluate_l2_error,
    evaluation_points,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ArdoSolver",
    "Batch",
    "BoundaryPoint",
    "BoundarySample",
    "CheckResult",
    "ConfigError",
    "DirichletMask",
    "DivergenceError",
    "Domain",
    "GeneratorRow",
    "LossEstimate",
    "MaskedTestFunction",
    "MlpNetwork",
    "PdeProblem",
    "QuadratureGrid",
    "RunMetrics",
    "RunSpec",
    "SamplingCheck",
    "StepParams",
    "TrainConfig",
    "TrainResult",
    "VarianceRow",
    "adam_step",
    "boundary_directional_difference",
    "builtin_problem",
    "builtin_problem_names",
    "check_sampling_condition",
    "estimate_interior",
    "estimate_loss",
    "euler_step",
    "evaluate_l2_error",
    "evaluation_points",
    "generator_consistency_experiment",
    "generator_difference",
    "load_config",
    "masked_test_function",
    "parse_config_text",
    "pde_residual",
    "resolve",
    "run_gradient_suite",
    "run_identity_suite",
    "run_scaling_suite",
    "sample_batch",
    "tensor_grid",
    "train",
    "variance_scaling_experiment",
    "weakform_quadrature",
]
