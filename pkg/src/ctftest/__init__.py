"""Coarse-to-fine multiple hypothesis testing with FWER control.

Two-stage testing over a partition of a large variable set into cells:
screen cells first, then test individual variables inside surviving cells.
When true signals cluster within cells, the cell stage absorbs most of the
multiplicity burden and the per-variable threshold can be far less
conservative than a Bonferroni or Holm correction at the same family-wise
error level.  The package provides analytic error bounds and threshold
optimization for a Gaussian linear model, a finite-sample permutation
version for arbitrary scores, an estimator for the number of signal-bearing
cells, and a seeded simulation harness with a CLI.
"""

from .active_cells import (
    ActiveCellEstimate,
    adjusted_discovery,
    all_cell_pvalues,
    cell_pvalue,
    estimate_active_cells,
    inactive_count_root,
    threshold_counts,
)
from .baselines import bonferroni_reject, holm_reject, parametric_pvalues
from .distributions import (
    TailBoundInput,
    beta_cdf,
    chi2_cdf,
    chi2_quantile,
    chi2_sf,
    chi2_tail_bound,
    log_quadrant_constant,
    nc_chi2_lower_tail_bound,
)
from .errors import (
    CtfError,
    EmptyConditioningSetError,
    FileFormatError,
    InfeasibleThresholdsError,
    SingularDesignError,
)
from .harness import (
    ExperimentSpec,
    PowerTable,
    derive_seed,
    run_null_fwer_experiment,
    run_power_experiment,
)
from .linear_model import (
    Dataset,
    Partition,
    SimConfig,
    cell_score,
    generate_dataset,
    variable_score,
)
from .parametric import (
    CtfThresholds,
    DiscoverySet,
    IndexStats,
    PowerTarget,
    fwer_bound,
    fwer_bound_variable_cells,
    index_tail_bound,
    optimize_thresholds,
    power_lower_bound,
    quadrant_bound,
    run_parametric_test,
)
from .permutation import (
    PermutationPlan,
    ScoredPermutations,
    choose_permutation_thresholds,
    conditional_exceedance,
    default_epsilon_g,
    exceedance_fraction,
    exhaustive_permutations,
    finite_sample_fwer_bound,
    parametric_tail_ratio,
    permutation_scores,
    pooled_rank_fractions,
    run_permutation_test,
    sample_permutations,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveCellEstimate",
    "CtfError",
    "CtfThresholds",
    "Dataset",
    "DiscoverySet",
    "EmptyConditioningSetError",
    "ExperimentSpec",
    "FileFormatError",
    "IndexStats",
    "InfeasibleThresholdsError",
    "Partition",
    "PermutationPlan",
    "PowerTable",
    "PowerTarget",
    "ScoredPermutations",
    "SimConfig",
    "SingularDesignError",
    "TailBoundInput",
    "adjusted_discovery",
    "all_cell_pvalues",
    "beta_cdf",
    "bonferroni_reject",
    "cell_pvalue",
    "cell_score",
    "chi2_cdf",
    "chi2_quantile",
    "chi2_sf",
    "chi2_tail_bound",
    "choose_permutation_thresholds",
    "conditional_exceedance",
    "default_epsilon_g",
    "derive_seed",
    "estimate_active_cells",
    "exceedance_fraction",
    "exhaustive_permutations",
    "finite_sample_fwer_bound",
    "fwer_bound",
    "fwer_bound_variable_cells",
    "generate_dataset",
    "holm_reject",
    "inactive_count_root",
    "index_tail_bound",
    "log_quadrant_constant",
    "nc_chi2_lower_tail_bound",
    "optimize_thresholds",
    "parametric_pvalues",
    "parametric_tail_ratio",
    "permutation_scores",
    "pooled_rank_fractions",
    "power_lower_bound",
    "quadrant_bound",
    "run_null_fwer_experiment",
    "run_parametric_test",
    "run_permutation_test",
    "run_power_experiment",
    "sample_permutations",
    "threshold_counts",
    "variable_score",
]
