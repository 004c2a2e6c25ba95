"""Sparse random matrix laboratory: ensembles, self-consistent polynomials,
spectral measures and Monte Carlo experiments."""

import json as _json

from ._core import (  # noqa: F401
    ConfigError,
    ContinuationError,
    CumulantModel,
    Error,
    SelfConsistentPolynomial,
    SpectralMeasure,
    build_P0,
    custom_model,
    delta_exponent,
    eigenvalues,
    er_model,
    er_p_for_beta,
    find_edge,
    ks_test,
    make_polynomial,
    rademacher_model,
    sample_dense,
    sample_Z,
    semicircle_quantile,
    solve_m,
)
from ._core import run_experiment as _run_experiment


def run_experiment(config_toml: str, workers: int = 1) -> dict:
    """Run an experiment from TOML text; returns the stats.json content."""
    return _json.loads(_run_experiment(config_toml, workers))
