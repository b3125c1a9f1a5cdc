"""Weighted l1 recovery from quantized compressive measurements.

Decoders solve ``min ||x||_{w,1}`` subject to an lp fidelity tube (or exact
equality) with Douglas-Rachford splitting; ``analysis`` evaluates RIP, null
space and error-bound constants, and ``harness`` runs seeded sweeps.
"""

from ._version import __version__
from .analysis import (
    ErrorBoundResult,
    RipEstimate,
    RnspParams,
    UncertifiableError,
    compute_c_pq,
    cone_membership,
    estimate_rip,
    gaussian_sample_size,
    recovery_error_bound,
    rip_implies_rnsp,
    rnsp_check,
    weighted_block_norm,
)
from .estimators import MidRiserQuantizer, WeightedBasisPursuit, WeightedBPDQ
from .harness import (
    ExperimentConfig,
    TrialResult,
    emit_results,
    generate_instance,
    run_experiment,
    run_trial,
)
from .model import (
    Quantizer,
    SensingMatrix,
    Signal,
    TubeConstraint,
    WeightVector,
    make_weights,
    quantize,
    snr_db,
    weighted_l1_norm,
)
from .prox import (
    ConvergenceError,
    NewtonConfig,
    TubeProjectionConfig,
    project_affine_set,
    project_lp_ball,
    project_tube,
    prox_composition,
    prox_weighted_l1,
)
from .solver import SolveReport, SolverConfig, dr_step, douglas_rachford, solve_bp, solve_bpdq
