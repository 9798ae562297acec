"""Robustness of quantum objects and the games that witness it.

Channels, instruments, two-slot process matrices and testers are written as
block collections of Choi matrices.  For a convex free set the package
computes the generalised robustness with its own interior-point solver,
extracts the dual witness, turns it into an input-output game and checks
that the game's payoff advantage over the free set equals 1 + R.
"""

from types import ModuleType as _ModuleType

from .freesets import (
    ConicFreeSet,
    FreeSetError,
    MembershipCertificate,
    compile_all_valid,
    compile_classical_channels,
    compile_compatible_channels,
    compile_compatible_instruments,
    compile_entanglement_breaking_ppt,
    compile_g_covariant,
    compile_jointly_measurable,
    membership,
)
from .games import (
    CanonicalRecord,
    CollaborativeGame,
    DegenerateGameError,
    GameError,
    InputOutputGame,
    PayoffReport,
    canonicalize,
    discrimination_form,
    free_max_payoff,
    game_from_witness,
    payoff,
    verify_theorem1,
)
from .linalg import (
    ComplexMatrix,
    hermitian_eig,
    operator_schmidt,
    partial_trace,
    partial_transpose,
    tensor,
    trace_and_replace,
)
from .objects import (
    ChannelCollection,
    ChoiChannel,
    DensityMatrix,
    InstrumentCollection,
    InvalidObjectError,
    Povm,
    ProcessMatrix,
    ValidityReport,
    apply_channel,
    channel_to_choi,
    standard_object,
    validate,
)
from .robustness import RobustnessReport, Witness, build_robustness_primal, extract_witness, robustness, slater_check
from .solver import ConeProgram, Solution, SolverError, solve
from .supermaps import (
    SuperinstrumentCollection,
    compile_causally_ordered,
    compile_causally_separable,
    compile_compatible_testers,
    game_from_process_witness,
    probability,
    process_of_circuit,
    supermap_robustness,
    validity_project,
    verify_theorem2,
)

__version__ = "0.1.0"

__all__ = [name for name, value in globals().items() if not name.startswith("_") and not isinstance(value, _ModuleType)]
