"""Multilevel Picard approximation for semilinear heat equations with gradient-dependent nonlinearities."""

__version__ = "0.1.0"

from .problem import (  # noqa: E402
    EstimateVector,
    PdeProblem,
    example_cos_grad,
    example_sin_mean,
    linear_probe,
    make_problem,
)
from .random_kernels import RandomStream, RvCounter  # noqa: E402
from .stochastic_kernel import BrownianKernel, rho  # noqa: E402
from .mlp_core import (  # noqa: E402
    EstimationError,
    MlpParams,
    estimate,
    m_schedule,
    run_batch,
    rv_bound,
    rv_count_closed_form,
)
