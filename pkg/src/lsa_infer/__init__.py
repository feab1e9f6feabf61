"""Linear stochastic approximation with Polyak-Ruppert averaging, an online
multiplier bootstrap, and Monte-Carlo checks of Gaussian-approximation rates."""

__version__ = "0.1.0"

from lsa_infer.bootstrap import (
    BootstrapEnsemble,
    ConfidenceReport,
    WeightScheme,
    bootstrap_run,
    confidence_sets,
    coverage_experiment,
)
from lsa_infer.covariance import covariance_gap_series, q_matrices, sigma_inf, sigma_n, sigma_n_boot
from lsa_infer.engine import Trajectory, batch_averages, error_decompose, lsa_run
from lsa_infer.errors import ConfigError, DimensionError, DivergenceError, LsaError, SingularMatrixError
from lsa_infer.gaussapprox import (
    DistanceSeries,
    RateFit,
    bootstrap_validity_experiment,
    clt_rate_experiment,
    halfspace_distance,
    rate_fit,
)
from lsa_infer.model import (
    LsaInstance,
    MdpSpec,
    make_from_atoms,
    make_gaussian_identity_1d,
    make_random_hurwitz,
    make_td_generative,
)
from lsa_infer.schedule import AssumptionReport, StepSchedule, lyapunov_solve, stability_constants
