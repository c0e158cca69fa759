"""Bell-inequality laboratory for a product of two two-mode squeezed vacua."""

from .bell_polarization import (
    CANONICAL_ANGLES,
    TSIRELSON,
    AngleQuad,
    ChshResult,
    CorrelationKernel,
    CorrelationReport,
    DegenerateStateError,
    chsh_value,
    correlation_components,
    mean_polarization,
    normalized_E,
    parity_expectation,
    polarization_operator,
    symmetry_fidelity,
)
from .chsh_optimizer import OptimizerConfig, Optimum, optimize, verify_angle_set
from .fock_core import (
    Channel,
    FourModeOperator,
    FourModeState,
    ModeIndex,
    Polarization,
    TruncationSpec,
    annihilator,
    build_k0,
    build_k0_channel,
    build_kx,
    commutator_interior_norm,
    expectation,
    expm_apply,
    rotate_modes,
)
from .tmsv_state import (
    SchmidtProfile,
    build_state_exponential,
    build_state_schmidt,
    choose_cutoff,
    schmidt_profile,
)
from .wigner import (
    PhasePoint,
    QuadratureGrid,
    wigner_analytic,
    wigner_from_state,
    wigner_normalization,
)

__version__ = "0.1.0"
