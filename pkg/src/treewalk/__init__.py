"""Simulation and verification lab for randomly biased walks on random trees.

Builds marked Galton-Watson environments in the critical (boundary)
regime, truncates them with stopping frontiers, and checks the exact
objects of the reflected walk -- invariant measures, return times,
local-time moments -- against independent linear-algebra and Monte Carlo
oracles, plus desk-scale trend experiments for the asymptotic laws.
"""

__version__ = "0.1.0"

from .chain import (
    TruncatedChain,
    build_chain,
    covariance_bound_check,
    distribution_at,
    edge_local_time_moments,
    hitting_probability,
    return_diagonal_monotone,
    return_time_moments,
    stationary_distribution,
)
from .errors import (
    BudgetExceeded,
    ConfigError,
    DegeneratePath,
    DomainError,
    EnumerationBudgetExceeded,
    ExcursionBudgetExceeded,
    InvalidPair,
    NoSolution,
    ParityMassZero,
    SolveFailed,
    StepCapExceeded,
    TreewalkError,
    UnsupportedLaw,
)
from .frontier import StoppingFrontier, grow_to_frontier, partition_functions
from .limits import (
    ks_cdf,
    many_to_one_check,
    sample_eta,
    sample_eta_batch,
    scaling_density,
    s_walk_stopping,
    tilted_walk_law,
)
from .marks import MarkLaw, solve_constant_marks, solve_two_point_marks
from .measures import (
    InvariantMeasure,
    invariant_measure,
    measure_drift,
    parity_measure,
    total_variation,
)
from .tree import MarkedTree, MartingaleReport, martingales, sample_tree, unary_chain
from .walk import (
    EmpiricalLaw,
    ExcursionRecord,
    WalkConfig,
    barrier_hit_rate,
    simulate_excursion,
    simulate_path,
)

__all__ = [
    "BudgetExceeded",
    "ConfigError",
    "DegeneratePath",
    "DomainError",
    "EmpiricalLaw",
    "EnumerationBudgetExceeded",
    "ExcursionBudgetExceeded",
    "ExcursionRecord",
    "InvalidPair",
    "InvariantMeasure",
    "MarkLaw",
    "MarkedTree",
    "MartingaleReport",
    "NoSolution",
    "ParityMassZero",
    "SolveFailed",
    "StepCapExceeded",
    "StoppingFrontier",
    "TreewalkError",
    "TruncatedChain",
    "UnsupportedLaw",
    "WalkConfig",
    "barrier_hit_rate",
    "build_chain",
    "covariance_bound_check",
    "distribution_at",
    "edge_local_time_moments",
    "grow_to_frontier",
    "hitting_probability",
    "invariant_measure",
    "ks_cdf",
    "many_to_one_check",
    "martingales",
    "measure_drift",
    "parity_measure",
    "partition_functions",
    "return_diagonal_monotone",
    "return_time_moments",
    "sample_eta",
    "sample_eta_batch",
    "sample_tree",
    "scaling_density",
    "simulate_excursion",
    "simulate_path",
    "solve_constant_marks",
    "solve_two_point_marks",
    "stationary_distribution",
    "s_walk_stopping",
    "tilted_walk_law",
    "total_variation",
    "unary_chain",
]
