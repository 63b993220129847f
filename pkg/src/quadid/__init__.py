"""quadid: closed-loop black-box attitude identification workbench.

Simulates a quadrotor plant under cascade control, excites it with a
designed PRBS, estimates ARX/ARMAX/IV polynomial models from the logged
data, validates them with residual analysis and a two-stage eliminator,
and re-tunes PID/LQR controllers against the winning model.
"""

from .config import FullConfig, load_config
from .control import (CascadeConfig, LqrResult, PidGains, StateSpace,
                      cascade_step, closedloop_simulate, lqr_design, pid_step,
                      poly_to_statespace)
from .datalog import DataLog, read_log_csv, write_log_csv
from .errors import (ConfigError, DataError, DesignError, DivergenceError,
                     DomainError, EstimationError, IdentifiabilityError,
                     PipelineError, QuadIdError, RetuneError)
from .estimation import (Approach, ApproachFlags, Dataset, PolyModel,
                         build_regressors, detrend, estimate_armax,
                         estimate_arx, estimate_iv, fit_percent,
                         frequency_response, load_model, predict_one_step,
                         save_model, select_approach, simulate_model)
from .excitation import (ExcitationBand, PrbsConfig, Signal, design_prbs,
                         generate_prbs, persistency_order, square_wave)
from .pipeline import (CandidateSpec, IdentificationResult, RetuneResult,
                       dataset_from_log, identify, parse_grid, retune,
                       run_experiment)
from .plant import (ControlVector, QuadParams, RotorSet, State, gyro_sum,
                    mix_forces, motor_step, rigid_body_derivatives, step_rk4,
                    trim_hover)
from .reporting import CampaignResult, report, run_campaign
from .sensing import (SensorConfig, check_filter_rules, complementary,
                      lowpass, sample_imu)
from .validation import (ComparisonRow, ResidualReport, StageThresholds,
                         compare_models, residual_autocorr, residual_crosscorr)

__version__ = "0.1.0"
