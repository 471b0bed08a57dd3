"""sliceopt: sliced RAN resource orchestration.

Dimensioning math and a queueing oracle for bursty low-latency traffic,
solver-agnostic cone-program assembly with semidefinite lifting, a
consensus-ADMM bandwidth stage plus per-minislot beamforming, and a metrics
harness with a CLI.
"""

from .scenario import (
    ChannelSample,
    EmbbSliceSpec,
    ScenarioConfig,
    Topology,
    TrafficSpec,
    UrllcSliceSpec,
    acceptance_scenario,
    draw_sample_set,
    embb_rate,
    load_scenario,
    paper_scenario,
    path_loss_db,
    place_topology,
    save_scenario,
    snr,
)
from .urllc import (
    ChannelUseVector,
    StaffingResult,
    channel_use_bound,
    finite_blocklength_bits,
    per_ue_bandwidth,
    qfunc_inv,
    recut_prbs,
    staffing_coefficient,
    urllc_total_bandwidth,
)
from .queueing import (
    QueueClass,
    QueueConfig,
    QueueStats,
    erlang_c,
    simulate_queue,
    validate_staffing,
)
from .coneprog import ConeProgram, cone_census
from .builder import (
    LiftedBeamformers,
    SlackVars,
    build_minislot_problem,
    build_subproblem,
)
from .solvers import (
    CvxpyBackend,
    Rank1Report,
    SolverSettings,
    SolverSolution,
    brute_force_solve,
    extract_rank1,
    rank1_gap,
    solve,
)
from .admm import (
    AdmmReport,
    AdmmState,
    SliceSolution,
    dual_update,
    global_update,
    run_b2o,
    run_dbo,
    run_no_admm,
)
from .metrics import (
    ExperimentSpec,
    MetricsRow,
    audit_solution,
    check_monotone,
    long_term_metrics,
    run_algorithm,
    run_sweep,
    slot_utility,
)

__version__ = "0.1.0"
