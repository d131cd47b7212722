"""Power-system state estimation toolkit.

Numerical core: network cases, Newton power flow, measurement models, and a
WLS Gauss-Newton estimator.  Learning stack: ResNetD base-learners under an
MLR meta-learner, a lag-24 state forecaster for pseudo-measurements, and a
TOML-driven experiment pipeline with seeded, byte-reproducible artifacts.
"""

__version__ = "0.1.0"

from .cases import Branch, Bus, NetworkCase, load_bundled_case, make_case, parse_case
from .dataset import Dataset, NoiseSpec, generate_dataset, load_dataset, save_dataset
from .ensemble import (EnsembleConfig, EnsembleModel, EvaluationReport, Metrics,
                       SplitSpec, estimate, estimate_batch, evaluate,
                       load_ensemble, save_ensemble, train_ensemble)
from .errors import (CaseFormatError, CaseValidationError, ConfigError,
                     DatasetError, GridStateError, MaskedMeasurementError,
                     PlanError, ProfileError, SingularGainError,
                     SingularJacobianError, StageError, TrainingDivergedError)
from .forecaster import (ForecastModel, fit_forecaster, forecast_next,
                         forecaster_from_json, forecaster_to_json,
                         pseudo_measurements)
from .measurement import (MeasurementKind, MeasurementPlan, MeasurementSpec,
                          MeasurementVector, ResolvedPlan, add_gaussian_noise,
                          default_plan, evaluate_h, evaluate_jacobian,
                          resolve_plan)
from .neural import (ResNetDNetwork, StateEstimator, TrainingConfig,
                     estimator_from_json, estimator_to_json,
                     fit_state_estimator, train_network)
from .pipeline import ExperimentConfig, RunResult, load_config, run_experiment, run_hash
from .powerflow import LoadScenario, PowerFlowSolution, StateVector, solve_power_flow
from .profiles import LoadProfile, import_profile, save_profile, synth_profile
from .wls import EstimationResult, estimate_wls
from .ybus import AdmittanceMatrix, build_ybus
