"""Mean-field SDE / nonlinear Fokker-Planck simulation lab."""

from ._core import (
    Error,
    experiment_names,
    fk_terminal_x,
    gradient_check,
    run_experiment,
    simulate,
    solve_fpe,
    validate_config,
    wasserstein1,
    wasserstein2,
    wasserstein2_to_gaussian,
)

__all__ = [
    "Error",
    "experiment_names",
    "fk_terminal_x",
    "gradient_check",
    "run_experiment",
    "simulate",
    "solve_fpe",
    "validate_config",
    "wasserstein1",
    "wasserstein2",
    "wasserstein2_to_gaussian",
]
