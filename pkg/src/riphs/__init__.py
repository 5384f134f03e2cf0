"""Coupled reversible-irreversible port-Hamiltonian systems.

A state space model class with one Poisson structure driving the
reversible dynamics and a family of bracket-modulated structures driving
the irreversible part, plus the machinery the accompanying analysis needs:
structure-preserving simulation, steady-state sets and their geometry,
finite-horizon energy/entropy/exergy supply problems by direct
transcription, and turnpike diagnostics.

The built-in examples (a two-compartment heat exchanger, a gas-piston
device, a five-compartment thermal network) live in riphs.systems; the
command line front end is ``riphs`` (see riphs.cli).
"""

__version__ = "0.1.0"

from .model import (
    Box,
    DomainError,
    ModelError,
    PredicateDomain,
    RIPHSModel,
    TrajectorySolution,
    balance_residuals,
    brackets,
    entropy_production,
    entropy_production_batch,
    outputs,
    outputs_batch,
    poisson_bracket,
    rhs,
    rhs_batch,
    transform_model,
)
from .integrate import (
    HorizonSpec,
    IntegrationError,
    simulate,
    step_implicit_midpoint,
)
from .equilibria import (
    EquilibriumSet,
    ManifoldReport,
    NotSteadyError,
    SteadyState,
    distance_to_equilibria,
    find_optimal_steady_state,
    fit_distance_constant,
    likely_empty,
    manifold_dimension,
    steady_state_cost,
    subspace_distance_equivalence_check,
)
from .ocp import (
    ControlBounds,
    CostWeights,
    GenericNLP,
    NLPProblem,
    NLPSolution,
    OCPSpec,
    OutputSpec,
    SolverOptions,
    TerminalSpec,
    solve_nlp,
    solve_ocp,
    stage_cost,
    transcribe,
    warm_start_guess,
)
from .diagnostics import (
    SweepResult,
    TurnpikeReport,
    horizon_sweep,
    output_set_distances,
    target_intersection_empty,
    turnpike_metrics,
)
from .systems import (
    BUILTIN_SYSTEMS,
    GasPistonParams,
    HeatExchangerParams,
    NetworkParams,
    gas_piston,
    gas_piston_equilibria,
    gas_piston_reference_state,
    gas_piston_state,
    heat_exchanger,
    heat_exchanger_equilibria,
    heat_exchanger_state,
    heat_network,
    heat_network_equilibria,
    make_system,
    thermostat_control,
    thermostat_temperature,
)

__all__ = [name for name in dir() if not name.startswith("_")]
