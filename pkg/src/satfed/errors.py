"""Exception types shared across the simulator."""
from __future__ import annotations


class SatFedError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(SatFedError, ValueError):
    """Invalid configuration, dimension mismatch or infeasible topology."""


class DegenerateInputError(SatFedError, ValueError):
    """Input for which the requested quantity is undefined (zero norm, empty list)."""


class ClockSkewError(SatFedError, ValueError):
    """A timestamp lies in the future relative to the simulation clock."""


class DivergenceError(SatFedError, ArithmeticError):
    """Non-finite parameters produced by a training step."""

    def __init__(self, device_id: int, round_index: int, detail: str = ""):
        self.device_id = device_id
        self.round_index = round_index
        msg = f"non-finite parameters on device {device_id} in round {round_index}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
