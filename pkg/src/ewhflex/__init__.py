"""Monte Carlo simulation and optimal flexibility commitment for ensembles of
frequency-responsive electric water heaters."""

from .analytics import (
    AlphaEstimate,
    FlexibilityAssessment,
    OnProbabilityModel,
    PowerMoments,
    empirical_sq_error,
    estimate_alphas,
    expected_sq_error,
    grid_search_flexibility,
    optimal_flexibility,
    p_on,
    sup_error,
)
from .device import (
    EwhParams,
    EwhState,
    ThermalCoefficients,
    advance_temperature,
    apply_hysteresis,
    step_device,
    thermal_coefficients,
    time_to_threshold,
)
from .droop import DroopBand, ThresholdAssignment, assign_thresholds, post_event_power, respond_to_frequency, target_droop_power
from .population import (
    ControlWindow,
    DrawProfile,
    EnsembleTrajectory,
    PopulationSpec,
    load_draw_profile,
    mean_fraction_on,
    monte_carlo,
    sample_population,
    simulate_ensemble,
)

__version__ = "0.1.0"
