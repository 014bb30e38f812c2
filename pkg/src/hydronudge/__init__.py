"""Pseudospectral solver for the 3D hydrostatic primitive equations on a
periodic-in-horizontal slab, with a nudging data-assimilation harness."""

from .assimilation import (
    DecayFit,
    DecayRateRegressor,
    TwinConfig,
    TwinResult,
    fit_decay_rate,
    parameter_sweep,
    run_twin_experiment,
)
from .config import ConfigError, RunConfig, parse_config
from .domain import DomainSpec, PhysicalField, SpectralField, to_physical, to_spectral
from .dynamics import ForcingSpec, System, named_field, named_forcing
from .observation import CubeAverage, FourierLowpass, IdentityObservation, make_observation
from .spectral_analysis import assemble, gap_report, spectral_gap
from .timestep import SimulationDiverged, StabilityGuardError, StepperConfig, run_simulation

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CubeAverage",
    "DecayFit",
    "DecayRateRegressor",
    "DomainSpec",
    "ForcingSpec",
    "FourierLowpass",
    "IdentityObservation",
    "PhysicalField",
    "RunConfig",
    "SimulationDiverged",
    "SpectralField",
    "StabilityGuardError",
    "StepperConfig",
    "System",
    "TwinConfig",
    "TwinResult",
    "assemble",
    "fit_decay_rate",
    "gap_report",
    "make_observation",
    "named_field",
    "named_forcing",
    "parameter_sweep",
    "parse_config",
    "run_simulation",
    "run_twin_experiment",
    "spectral_gap",
    "to_physical",
    "to_spectral",
]
