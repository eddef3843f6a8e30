"""Exponential Euler-Maruyama simulation of positive SDEs with superlinear coefficients.

Modules
-------
model       coefficient families, structural condition checks, rate margins
paths       dyadic grids and reproducible, coarsenable Brownian paths
scheme      the exponential scheme, Euler comparators and closed-form solutions
estimators  strong errors, rate fits, moments and sojourn times
stability   stationary level and the scheme's stability band
presets     the benchmark models ``case1`` .. ``case9``, ``stability``, ``gbm``
cli         the ``expem`` experiment runner
"""

from .exceptions import (
    ConfigError,
    DomainError,
    ExpEMError,
    PreconditionError,
    UnsupportedModelError,
)
from .model import (
    HypothesisReport,
    ModelSpec,
    check_hypotheses,
    delta_epsilon,
    eval_coefficients,
    kappa_strong,
    kappa_weak,
)
from .paths import BrownianPath, TimeGrid, coarsen, make_grid, sample_brownian
from .presets import PRESETS, preset
from .scheme import (
    Trajectory,
    TrajectoryBatch,
    exp_em_step,
    simulate,
    simulate_batch,
    stopping_threshold,
)
from .estimators import ConvergenceTable, ErrorEstimate, convergence_table, fit_rate, strong_error
from .stability import StabilityReport, scheme_stationary_bounds, stationary_point

__version__ = "0.1.0"
