"""Routing games on parallel networks with Markov-modulated path costs."""

from .core import (
    ContractViolation,
    FlowAllocation,
    NetworkConfig,
    PathModel,
    PathRealization,
    expected_internal_cost,
    immediate_social_cost,
)

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "FlowAllocation",
    "NetworkConfig",
    "PathModel",
    "PathRealization",
    "expected_internal_cost",
    "immediate_social_cost",
]
