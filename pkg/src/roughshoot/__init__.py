"""Pathwise stochastic optimal control on rough-path lifts of sampled noise.

Layers: grid/lift build Stratonovich rough paths from Brownian samples;
integrate marches state, adjoint, and variational equations with a
second-order rough step; shooting solves the optimality boundary-value
problem by Newton on the terminal adjoint mismatch; transcription solves the
sample-average problem directly by SQP; bench/cli run seeded experiments.
"""

from .bench import (
    ConfigError,
    ExperimentReport,
    RunConfig,
    emit_report,
    make_problem,
    median_costs,
    median_speedup,
    run_experiment,
    run_feedback,
    sweep_sample_sizes,
)
from .fields import VectorFieldBundle, augment_fields, validate_jacobians
from .grid import (
    ControlSignal,
    EnsembleSpec,
    SampledPath,
    TimeGrid,
    brownian_sample,
    coarsen,
    increment,
)
from .integrate import (
    IntegrationError,
    RoughStepInput,
    integrate_coupled,
    integrate_forward,
    integrate_linear,
    milstein_step,
    needle_variation_check,
    pairing_invariant_check,
    rough_step,
)
from .lift import (
    GridRoughPath,
    chen_compose,
    check_geometric,
    prefix_level2,
    stratonovich_lift,
    window_level2,
)
from .problems import (
    OcpProblem,
    SpacecraftConfig,
    evaluate_cost_mc,
    grad_u_hamiltonian,
    grad_x_hamiltonian,
    hamiltonian,
    scalar_lqr_test,
    spacecraft_fb,
    spacecraft_ol,
)
from .pvar import GreedyPartition, control_w, greedy_partition, p_variation
from .shooting import (
    NewtonReport,
    ShootingUnknowns,
    SolverOptions,
    homotopy_solve,
    newton_solve,
    numeric_jacobian,
    shooting_map,
)
from .transcription import (
    DecisionVector,
    KktSystem,
    TranscriptionLayout,
    rollout_states,
    solve_direct,
    sqp_solve,
    transcribe,
)

__all__ = [
    "ConfigError",
    "ControlSignal",
    "DecisionVector",
    "EnsembleSpec",
    "ExperimentReport",
    "GreedyPartition",
    "GridRoughPath",
    "IntegrationError",
    "KktSystem",
    "NewtonReport",
    "OcpProblem",
    "RoughStepInput",
    "RunConfig",
    "SampledPath",
    "ShootingUnknowns",
    "SolverOptions",
    "SpacecraftConfig",
    "TimeGrid",
    "TranscriptionLayout",
    "VectorFieldBundle",
    "augment_fields",
    "brownian_sample",
    "chen_compose",
    "check_geometric",
    "coarsen",
    "control_w",
    "emit_report",
    "evaluate_cost_mc",
    "grad_u_hamiltonian",
    "grad_x_hamiltonian",
    "greedy_partition",
    "hamiltonian",
    "increment",
    "integrate_coupled",
    "integrate_forward",
    "integrate_linear",
    "make_problem",
    "median_costs",
    "median_speedup",
    "milstein_step",
    "needle_variation_check",
    "newton_solve",
    "numeric_jacobian",
    "p_variation",
    "pairing_invariant_check",
    "prefix_level2",
    "rollout_states",
    "rough_step",
    "run_experiment",
    "run_feedback",
    "scalar_lqr_test",
    "shooting_map",
    "solve_direct",
    "spacecraft_fb",
    "spacecraft_ol",
    "sqp_solve",
    "stratonovich_lift",
    "sweep_sample_sizes",
    "transcribe",
    "validate_jacobians",
    "window_level2",
]
