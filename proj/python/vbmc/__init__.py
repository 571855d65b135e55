"""Variational Bayesian Monte Carlo with a C++ core."""

from ._core import (
    InferenceResult,
    SyntheticProblem,
    VariationalPosterior,
    gaussianized_skl,
    make_problem,
    run,
    run_benchmark,
    summarize,
)

__all__ = [
    "InferenceResult",
    "SyntheticProblem",
    "VariationalPosterior",
    "gaussianized_skl",
    "make_problem",
    "run",
    "run_benchmark",
    "summarize",
]
