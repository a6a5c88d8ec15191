"""Python bindings for the reBandit C++ core."""

from ._core import (
    PARAM_DIM,
    __version__,
    action_probability,
    build_design,
    joint_posterior,
    marginal_log_likelihood,
    posterior,
    replay_trial_log,
    rho,
    run_experiment,
    standard_prior,
    update_hyperparams,
)

__all__ = [
    "PARAM_DIM",
    "__version__",
    "action_probability",
    "build_design",
    "joint_posterior",
    "marginal_log_likelihood",
    "posterior",
    "replay_trial_log",
    "rho",
    "run_experiment",
    "standard_prior",
    "update_hyperparams",
]
