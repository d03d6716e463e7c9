"""Signal recovery from multi-target detection measurements.

The package simulates long measurements containing many noisy, randomly
translated, well-separated copies of a short target signal, and recovers the
signal (and its occupancy density) directly from the measurement's first
three autocorrelations, without detecting individual occurrences. Two
estimators are provided: plain least-squares moment matching, and a weighted
variant whose weighting is the inverse covariance of per-window moment
observations, estimated from the data.
"""

from .model import (
    MomentLayout,
    MomentVector,
    NoiseModel,
    Params,
    bias_matrix,
    model_jacobian,
    model_moments,
    signal_autocorrelations,
)
from .simulate import (
    Measurement,
    MeasurementSpec,
    read_measurement,
    sample_translations,
    sigma_for_snr,
    spec_for_density,
    synthesize,
    write_measurement,
)
from .moments import (
    CovarianceAccumulator,
    CovarianceEstimate,
    EmpiricalMoments,
    WeightMatrix,
    empirical_moments,
    estimate_covariance,
    read_matrix_file,
    weight_matrix,
    window_mean,
    window_moment_vector,
    write_matrix_file,
)
from .estimate import (
    Estimate,
    ObjectiveSpec,
    OptimizerOptions,
    RecoveryError,
    StartDiagnostic,
    aligned_relative_error,
    asymptotic_covariance,
    default_ls_weights,
    ls_weight_matrix,
    minimize,
    minimize_function,
    objective_and_gradient,
    recover,
    recover_from_moments,
    relative_error,
    residual,
)
from .experiment import (
    ExperimentConfig,
    ResultRow,
    parse_config_text,
    read_config_file,
    run_experiment,
)

__version__ = "0.1.0"
