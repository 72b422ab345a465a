"""Two-stage Bayesian ideal-point model with informative missingness."""

from .config import ConfigError, IrtConfig, config_from_dict, load_config
from .fit import FitError, MapFit, fit_map, initial_params
from .laplace import laplace_draws
from .mcmc import McmcError, mcmc_validate
from .model import (
    IrtParams,
    NonFiniteError,
    Posterior,
    bounded,
    grad_log_posterior,
    log_posterior,
    response_probability,
)
from .posterior import (
    Classification,
    FitTable,
    IrtPosterior,
    ScoreSummary,
    classify,
    load_fit_table,
    read_fit_table,
    summarize,
    write_fit_table,
)

__all__ = [
    "Classification",
    "ConfigError",
    "FitError",
    "FitTable",
    "IrtConfig",
    "IrtParams",
    "IrtPosterior",
    "MapFit",
    "McmcError",
    "NonFiniteError",
    "Posterior",
    "ScoreSummary",
    "bounded",
    "classify",
    "config_from_dict",
    "fit_map",
    "grad_log_posterior",
    "initial_params",
    "laplace_draws",
    "load_config",
    "load_fit_table",
    "log_posterior",
    "mcmc_validate",
    "read_fit_table",
    "response_probability",
    "summarize",
    "write_fit_table",
]
