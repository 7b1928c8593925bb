"""opebench: off-policy evaluation estimators (DM, IS, WIS, DR, and the
variance-minimizing DR family) with benchmark environments and a replicated
experiment harness."""

__version__ = "0.1.0"

from .core import (
    ABSORBING,
    Dataset,
    Policy,
    State,
    Step,
    Trajectory,
    check_absolute_continuity,
    corrected_return,
    cumulative_ratio,
    discounted_return,
    load_dataset,
    samples_to_dataset,
    save_dataset,
)
from .estimators import (
    ESTIMATOR_IDS,
    EstimatorReport,
    bandit_dr_estimate,
    dm_estimate,
    dr_estimate,
    estimate,
    is_estimate,
    step_is_estimate,
    step_wis_estimate,
    wis_estimate,
)
from .fit_dm import DmFitConfig, dm_fit_bandit, dm_fit_rl, occupancy_objective_check
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    PolicySpec,
    rmse,
    run_experiment,
    significance_test,
)
from .linmodel import (
    GdConfig,
    LinearQModel,
    TabularFeatures,
    WlsProblem,
    gd_minimize,
    load_model,
    mountaincar_features,
    save_model,
    wls_solve,
)
from .mrdr import (
    BanditSpec,
    MrdrFitConfig,
    bandit_dr_variance_closed_form,
    mrdr_fit,
    mrdr_objective_bandit,
    mrdr_objective_rl,
    mrdr_wls_deterministic,
    omega_matrix,
    q_vector,
)
