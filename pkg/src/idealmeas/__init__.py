"""Finite-size simulation of ideal quantum measurements on a system + apparatus pair."""

from .dynamics import (
    BlockState,
    assemble_full,
    coherence_metrics,
    final_state_check,
    init_blocks,
    oracle_full_evolution,
    propagate,
    registration_metrics,
)
from .ensembles import (
    OutcomeDistribution,
    SubensembleNode,
    born_probabilities,
    hierarchy_audit,
    luders_update,
    merge_subensembles,
    sample_runs,
    select_outcome,
)
from .equilibrium import (
    InfeasibleTargetError,
    MaxEntProblem,
    canonical_sector_state,
    identify_equilibrium,
    max_ent_solve,
    microcanonical_state,
)
from .models import (
    ApparatusSpec,
    MeasurementModel,
    ProjectorFamily,
    Schedule,
    TestedSystemSpec,
    build_coupling,
    make_dephasing_apparatus,
    make_ergodic_apparatus,
    validate_ideality,
)
from .operators import (
    DensityError,
    check_density,
    evolve_unitary,
    partial_trace,
    tensor,
    trace_distance,
    von_neumann_entropy,
)
from .subensembles import (
    CorrelatedSubspace,
    SubensembleSpec,
    admissible_split,
    evolve_subensemble,
    random_correlated_pure,
    sample_admissible_decomposition,
    support_projection_check,
    time_averaged_state,
    weights_from_amplitudes,
)

__version__ = "0.1.0"
