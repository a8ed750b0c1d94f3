"""Quantum trajectory engine.

Wave-function propagation (explicit time stepping, matrix and Numerov
eigen/scattering solvers), Bohmian velocity fields and trajectory ensembles,
direct hydrodynamic (amplitude/action) solvers in Eulerian and moving-frame
form, conditional-wave many-body dynamics, local observable averages, and a
scenario-driven CLI that writes plot-ready CSV/JSON.
"""
__version__ = "0.1.0"

from bohmsim.core import (
    ComplexField,
    Grid1D,
    Grid2D,
    GridMismatchError,
    PolarField,
    PotentialSpec,
    SI_ELECTRON,
    UnitSystem,
    from_polar,
    gradient,
    laplacian,
    norm,
    normalize,
    sample_quantum_equilibrium,
    to_polar,
)
from bohmsim.manybody import (
    COULOMB_STRENGTH,
    ConditionalResult,
    InteractionSpec,
    ManyBodyState,
    TwoParticleResult,
    antisymmetrized_state,
    assemble_exchange_wave,
    conditional_evolve,
    continuity_residual,
    exact_two_particle_evolve,
    pair_interaction_matrix,
    product_state,
    separable_potential,
    stability_factor_2d,
    velocity_components,
)
from bohmsim.observables import (
    InconclusiveRunError,
    LocalMean,
    ObservableReport,
    dwell_time,
    local_operator_mean,
    mean_kinetic,
    mean_momentum,
    mean_position,
)
from bohmsim.qhje import (
    CausticError,
    ClassicalResult,
    FluidElementSet,
    LagrangianResult,
    LogPolarField,
    LogPolarResult,
    QhjeConfig,
    StepSizeError,
    classical_ensemble_evolve,
    elements_from_polar,
    eulerian_logpolar_evolve,
    lagrangian_evolve,
    scattered_derivative,
)
from bohmsim.presets import PRESETS, preset_names, preset_text
from bohmsim.runner import RunResult, emit_csv, emit_json, run_scenario
from bohmsim.scenario import ScenarioConfig, ScenarioError, parse_scenario
from bohmsim.tdse import (
    STABILITY_GATE,
    EvolveResult,
    GaussianParams,
    StabilityError,
    TdseConfig,
    evolve,
    gaussian_packet,
    stability_factor,
)
from bohmsim.tise import (
    EigenSolution,
    ScatteringSolution,
    TransmissionScan,
    bound_states,
    numerov_sweep,
    scattering_state,
    transmission_scan,
)
from bohmsim.trajectories import (
    NODE_DENSITY_FRACTION,
    TrajectoryEnsemble,
    VelocityFrame,
    bohmian_velocity,
    current_density,
    integrate_trajectories,
    left_probability,
    quantum_potential,
    velocity_frames,
    velocity_from_phase,
)

__all__ = [
    "COULOMB_STRENGTH",
    "CausticError",
    "ClassicalResult",
    "ComplexField",
    "ConditionalResult",
    "EigenSolution",
    "EvolveResult",
    "FluidElementSet",
    "GaussianParams",
    "Grid1D",
    "Grid2D",
    "GridMismatchError",
    "InconclusiveRunError",
    "InteractionSpec",
    "LagrangianResult",
    "LocalMean",
    "LogPolarField",
    "LogPolarResult",
    "ManyBodyState",
    "NODE_DENSITY_FRACTION",
    "ObservableReport",
    "PRESETS",
    "PolarField",
    "PotentialSpec",
    "QhjeConfig",
    "RunResult",
    "SI_ELECTRON",
    "STABILITY_GATE",
    "ScatteringSolution",
    "ScenarioConfig",
    "ScenarioError",
    "StabilityError",
    "StepSizeError",
    "TdseConfig",
    "TrajectoryEnsemble",
    "TransmissionScan",
    "TwoParticleResult",
    "UnitSystem",
    "VelocityFrame",
    "antisymmetrized_state",
    "assemble_exchange_wave",
    "bohmian_velocity",
    "bound_states",
    "classical_ensemble_evolve",
    "conditional_evolve",
    "continuity_residual",
    "current_density",
    "dwell_time",
    "elements_from_polar",
    "emit_csv",
    "emit_json",
    "eulerian_logpolar_evolve",
    "evolve",
    "exact_two_particle_evolve",
    "from_polar",
    "gaussian_packet",
    "gradient",
    "integrate_trajectories",
    "lagrangian_evolve",
    "laplacian",
    "left_probability",
    "local_operator_mean",
    "mean_kinetic",
    "mean_momentum",
    "mean_position",
    "norm",
    "normalize",
    "numerov_sweep",
    "pair_interaction_matrix",
    "parse_scenario",
    "preset_names",
    "preset_text",
    "product_state",
    "quantum_potential",
    "run_scenario",
    "sample_quantum_equilibrium",
    "scattered_derivative",
    "scattering_state",
    "separable_potential",
    "stability_factor",
    "stability_factor_2d",
    "to_polar",
    "transmission_scan",
    "velocity_components",
    "velocity_frames",
    "velocity_from_phase",
]
