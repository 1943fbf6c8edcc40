"""Preparation and validation of W-like states on frustrated Rydberg rings."""

__version__ = "0.1.0"

from .errors import (CapacityError, ConfigError, NumericalError, ValidationError,  # noqa: F401
                     WringError)
from .lattice import (HardwareLimits, PrepParams, PulseSchedule, RingGeometry,  # noqa: F401
                      Waveform, build_prep_schedule, build_rotation_schedule,
                      interaction_matrix, perturb_positions, ring_positions, validate_hardware)
from .hamiltonian import (QuantumState, RydbergModel, build_hamiltonian,  # noqa: F401
                          ground_state, kink_string, kink_superposition, px_expectation,
                          spectral_gap)
from .dynamics import (NoiseParams, apply_rotation, evolve_closed, evolve_open,  # noqa: F401
                       evolve_trajectories, operator_fidelity, preparation_fidelity)
