"""Localized ensemble Kalman-Bucy filter with stability diagnostics.

Modules
-------
locmat       taper construction, Schur products, norms
model        Lorenz-96 drifts, observation noise, canonical transform
dynamics     truth simulation, observation increments, binary streams
filtering    the filter step, runner and diagnostics
theory       stability bounds, Riccati solution, Lyapunov weights, rates
experiments  twin runs, metrics and scaling sweeps
config       plain-text experiment configuration
persistence  CSV and JSON outputs
verify       randomized property suites
estimator    scikit-learn style wrapper
"""

from .config import parse_config, parse_config_text
from .dynamics import (
    OBS_MAGIC,
    TRAJ_MAGIC,
    ObservationRecord,
    SimConfig,
    TruthState,
    observe_increment,
    read_stream,
    simulate,
    spinup_init,
    step_truth,
    write_stream,
)
from .estimator import LocalizedEnKBF
from .exceptions import (
    BlowUpError,
    ConfigError,
    LEnKBFError,
    SingularCovarianceError,
    StiffnessError,
    StreamFormatError,
)
from .experiments import (
    ExperimentSpec,
    MetricsRecord,
    dim_sweep,
    eps_sweep,
    error_series,
    metrics,
    run_experiment,
    time_sweep,
    twin_run,
)
from .filtering import (
    Ensemble,
    FilterConfig,
    FilterRunner,
    cov_ode_rhs,
    filter_step,
    init_ensemble,
    mean_increment,
    run_filter,
)
from .locmat import (
    LocalizationMatrix,
    build_localization,
    circ_distance,
    diag_inverse,
    gaspari_cohn,
    localization_stats,
    norms,
    schur_localize,
)
from .model import (
    DriftModel,
    ObsNoiseSpec,
    canonicalize,
    lorenz96_drift,
    lorenz96_model,
    lorenz96_truncated_drift,
    truncated_lorenz96_model,
    verify_dominance,
)
from .theory import (
    alpha_beta,
    lyapunov_weights,
    lyapunov_weights_mc,
    riccati_closed_form,
    stability_bounds,
)

__version__ = "0.1.0"
