"""Cross-sectional forecast reconciliation for hierarchical and grouped series."""

from hierrec.errors import (
    ConvergenceError,
    InfeasibleError,
    InputError,
    NumericalError,
    ReconciliationError,
)
from hierrec.hierarchy import (
    Hierarchy,
    HierarchySpec,
    balance,
    build_hierarchy,
    coherence_residual,
    elementary_hierarchies,
    is_coherent,
    level_matrix,
)
from hierrec.reconcile import (
    ForecastSet,
    ReconciliationResult,
    average_methods,
    bottom_up,
    ccc,
    ccc_combine,
    ccc_pooled,
    lcc_average,
    lcc_endogenous,
    lcc_exogenous,
    lcc_exogenous_gl,
    mint,
    reconcile_nonnegative,
    top_down_hp,
)
from hierrec.solver import (
    EqualitySystem,
    SolveDiagnostics,
    projection_matrix,
    solve_endogenous,
    solve_equality,
    solve_nonnegative,
)
from hierrec.weights import (
    CombinationWeights,
    WeightMatrix,
    proportions_from_weights,
    shrinkage_covariance,
    training_variance_weights,
    unit_weights,
    weights_from_proportions,
)

__version__ = "0.1.0"
