"""Anytime-valid risk monitoring of deployed models from mixed
labeled/unlabeled loss streams."""

from .bounds import (
    BettingSpec,
    ConfidenceSequenceSpec,
    VarianceProcess,
    betting_upper_bound,
    blockwise_ppi_values,
    cm_eb_radius,
    hoeffding_radius,
    mixture_integral,
    psi_E,
    variance_process_update,
)
from .estimators import (
    EtaPolicy,
    LabeledLossPair,
    RiskEstimate,
    StepBatch,
    denormalize_bound,
    eta_adaptive,
    eta_star,
    normalize_loss,
    ppi_estimate,
    supervised_estimate,
)
from .harness import (
    ExperimentPlan,
    ExperimentSummary,
    compare_eta_modes,
    method_config,
    run_experiment,
)
from .monitors import (
    BoundTrace,
    Monitor,
    MonitorConfig,
    MonitorState,
    SourceCalibration,
    UrmCalibration,
    UrmMonitor,
    calibrate_source,
    calibrate_urm,
    first_alarm_time,
    monitor_step,
    urm_calibrate,
    urm_step,
)
from .simulator import (
    ConstantSchedule,
    DriftScenario,
    PulseSchedule,
    RampSchedule,
    StepSchedule,
    generate_paired_streams,
    generate_stream,
    true_running_risk,
)

__version__ = "0.1.0"
