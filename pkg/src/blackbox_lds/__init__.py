"""Black-box control of unknown linear time-invariant systems under
adversarial disturbances and adversarial convex costs.

Three-phase pipeline (robust identification, SDP-based stabilizing-controller
recovery, nonstochastic online control) plus randomized and deterministic
lower-bound adversaries that attack arbitrary controllers.
"""

from .lds import (
    ClippedGaussianDisturbance,
    CostFunction,
    DisturbanceSource,
    LdcParams,
    LinearSystem,
    PriorBounds,
    ReplayDisturbance,
    RunLog,
    SignAdversarialDisturbance,
    SinusoidalDisturbance,
    StabilityCertificate,
    ZeroDisturbance,
    certify_strong_stability,
    controllability_matrix,
    min_energy_controls,
    simulate,
    step,
    strong_controllability_check,
)
from .plant import BlackBoxPlant
from .sysid import EstimateBundle, ProbePlan, adv_sys_id, epsilon_zero, probe_plan
from .stabilize import (
    SdpBlockMatrix,
    controller_recovery,
    decay,
    extract_controller,
    project_affine,
    project_psd_trace,
    sdp_feasibility,
)
from .nsc import (
    DacParams,
    best_dac_in_hindsight,
    dac_control,
    estimate_disturbance,
    gpc_run,
    project_M,
    surrogate_cost,
    surrogate_gradient,
)
from .pipeline import PhaseConstants, PipelineReport, derive_constants, regret, run_pipeline
from .lowerbound import (
    AdversaryTranscript,
    SubspaceTracker,
    deterministic_adversary,
    orthogonal_residual,
    randomized_lb_trial,
    sample_gaussian_system,
)

__all__ = [name for name in dir() if not name.startswith("_")]
