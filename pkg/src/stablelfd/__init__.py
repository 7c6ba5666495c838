"""Continual learning from demonstration with hypernetwork-generated stable neural ODEs.

All numeric paths run in 64-bit; importing the package switches JAX to x64.
"""

import jax

jax.config.update("jax_enable_x64", True)

from stablelfd.dynamics import (  # noqa: E402
    ContractError,
    DivergenceError,
    IcnnSpec,
    IntegratorConfig,
    MlpSpec,
    Node,
    SNode,
    Trajectory,
)

__all__ = [
    "ContractError",
    "DivergenceError",
    "IcnnSpec",
    "IntegratorConfig",
    "MlpSpec",
    "Node",
    "SNode",
    "Trajectory",
]

__version__ = "0.1.0"
