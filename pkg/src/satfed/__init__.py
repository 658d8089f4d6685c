"""Discrete-event simulator for satellite-assisted heterogeneous federated learning.

Devices train personalised models, exchange them with a server over lossy
terrestrial links and with each other through LEO satellite caches, and
weight peer models through a similarity / connection / computation multigraph.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ClockSkewError,
    ConfigurationError,
    DegenerateInputError,
    DivergenceError,
    SatFedError,
)

__all__ = [
    "__version__",
    "ClockSkewError",
    "ConfigurationError",
    "DegenerateInputError",
    "DivergenceError",
    "SatFedError",
]
