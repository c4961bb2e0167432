"""UVN flash: stability analysis and entropy-maximizing phase split with the Peng-Robinson EOS."""
from .eos import (
    Component,
    EOSDomainError,
    Mixture,
    StateTVN,
    TemperatureSolveError,
    load_database,
    mixture_from_database,
    properties,
    solve_temperature,
)
from .flash import (
    FlashConfig,
    FlashConvergenceError,
    FlashSolution,
    FlashSpec,
    InfeasiblePointError,
    InitialGuessError,
    PhaseSplit,
    flash,
    initial_split,
)
from .solver import SolverConfig, SolverResult, newton
from .stability import StabilityOutcome, StabilitySpec, TrialPhase, run_stability

__version__ = "0.1.0"
