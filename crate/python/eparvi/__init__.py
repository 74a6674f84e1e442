"""Electrostatics-based particle variational inference.

Sample sets are passed and returned as lists of rows.
"""

from ._eparvi import (
    EparviError,
    Mesh,
    Target,
    avg_nll,
    export,
    langevin,
    list_targets,
    metropolis_hastings_chain,
    mmd_squared,
    run_experiment,
    sample,
)

__all__ = [
    "EparviError",
    "Mesh",
    "Target",
    "avg_nll",
    "export",
    "langevin",
    "list_targets",
    "metropolis_hastings_chain",
    "mmd_squared",
    "run_experiment",
    "sample",
]
