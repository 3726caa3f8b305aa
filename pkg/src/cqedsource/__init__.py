"""Simulator for a cavity-QED source of polarization-entangled photons.

Units: angular frequencies in MHz, times in microseconds.
"""
from .errors import (
    ConfigError,
    CqedSourceError,
    DomainError,
    InvalidInputError,
    ModelValidityWarning,
    NumericalInstabilityError,
    OutputError,
    TruncationError,
)
from .model import (
    ContinuumGrid,
    InitialSuperposition,
    PolarizationBranch,
    Pulse,
    Sampled,
    SampledPhase,
    SineSquaredRamp,
    SpectralEnvelope,
    Square,
    default_grid,
    ideal_fidelity,
    project_measurement,
    pulse_integral_mu,
    pulse_integral_theta,
    spectral_envelope,
    square_pulse,
    wavepacket_overlap,
)
from .noise import (
    MuStatistics,
    NoiseSpec,
    averaged_fidelity,
    convert_d_to_fr,
    convert_fr_to_d,
    loss_fidelity,
    monte_carlo_transfer,
    mu_statistics,
    sample_mu,
)
from .motion import (
    MotionHamiltonian,
    MotionSpec,
    SingleExcitationState,
    excitation_number,
    lamb_dicke_coefficients,
    motion_fidelity,
    propagate,
    target_state,
    thermal_weights,
)

__version__ = "0.1.0"
