"""Population size, proportion and mean estimation from stratified
link-tracing samples, with Rao-Blackwellized improvements."""

from .population import (
    LinkCountMatrix,
    Population,
    PopulationError,
    StratumMeta,
    SyntheticSpec,
    generate_synthetic,
    link_counts,
    load_population,
    save_population,
    surrogate_spec,
    top_degree_units,
)
from .design import (
    DesignParams,
    ObservedSample,
    ReducedData,
    draw_sample,
    observe,
    read_sample,
    reduce,
    with_roles,
    write_sample,
)
from .estimators import (
    CountStatistics,
    EstimateWithVariance,
    EstimationError,
    ci_log_transform,
    ci_normal,
    count_statistics,
    jackknife_variance_size,
    mean_estimate,
    population_size_estimate,
    proportion_estimate,
    size_estimate,
    stratum_size_estimate,
    stratum_size_estimates,
)
from .reorder import (
    ChainState,
    Reordering,
    enumerate_reorderings,
    is_consistent,
    log_conditional_prob,
    mh_step,
    original_ordering,
    propose,
    run_chain,
)
from .diagnostics import SeedSearchConfig, gelman_rubin, search_overdispersed
from .rao_blackwell import RBResult, rb_exact, rb_mcmc
from .simharness import StudyConfig, StudyReport, coverage_score, run_study

__version__ = "0.1.0"
