"""Off-policy evaluation from adaptively logged bandit feedback.

The heavy lifting lives in the compiled extension; this package re-exports
its public surface.
"""

from ope._core import (
    Dataset,
    Simulation,
    acceptance_suites,
    make_gaussian_blobs,
    normal_quantile,
    parse_libsvm,
    parse_libsvm_file,
    run_acceptance,
    run_experiment,
    simulate,
    simulate_classification,
    standardize_features,
)

__all__ = [
    "Dataset",
    "Simulation",
    "acceptance_suites",
    "make_gaussian_blobs",
    "normal_quantile",
    "parse_libsvm",
    "parse_libsvm_file",
    "run_acceptance",
    "run_experiment",
    "simulate",
    "simulate_classification",
    "standardize_features",
]
