"""Sparse mini-batch SGD with AdaBatch aggregation."""

from ._core import (
    AdaBatchError,
    Dataset,
    DivergenceError,
    FeatureStats,
    ParseError,
    PreconditionError,
    StatsMismatchError,
    UsageError,
    brute_force_moments,
    cbp_scale,
    estimate_feature_probabilities,
    full_gradient,
    full_objective,
    gen_synthetic,
    inverse_count_expectation,
    lemma1_mean,
    lemma1_second_moment,
    lemma1_second_moment_bound,
    lemma2_bound,
    load_libsvm,
    max_stable_step,
    normalize_rows,
    run_lemma_suite,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
