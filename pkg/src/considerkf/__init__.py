"""Consider, desensitized and sensitivity-matrix Kalman filters for linear
systems with uncertain constant parameters."""
from .bridge import (
    EquivalenceReport,
    cross_cov_from_sensitivity,
    recover_full_covariance,
    relative_deviation,
    run_equivalence,
)
from .estimators import (
    ConsiderKalmanFilter,
    DesensitizedKalmanFilter,
    KalmanFilter,
    SensitivityConsiderKalmanFilter,
)
from .filters import (
    CkfState,
    FilterError,
    KfState,
    MeasurementOutcome,
    SdkfState,
    SingularInnovationError,
    SmckfState,
    ckf_measurement_update,
    ckf_time_update,
    desensitized_cost,
    desensitized_cost_gradient,
    kf_measurement_update,
    kf_time_update,
    sdkf_gain,
    sdkf_measurement_update,
    sdkf_time_update,
    smckf_measurement_update,
    smckf_time_update,
)
from .model import (
    ParameterPrior,
    Scenario,
    SensitivityWeight,
    StepMatrices,
    SystemModel,
    ValidationReport,
    builtin_fixture,
    random_stable,
    validate_model,
)
from .sim import McReport, TruthRecord, nees, run_monte_carlo, sample_parameter, simulate, step_truth

__version__ = "0.1.0"
