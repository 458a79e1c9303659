"""Domain types shared by every module: paths, networks, flows.

The deterministic path always sits at index 0; stochastic paths are 1..N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Absolute tolerance for case-boundary comparisons (E[c] against c_0 +/- 1 etc.).
BOUNDARY_TOL = 1e-9
# Flow conservation tolerance.
MASS_TOL = 1e-12


class ContractViolation(ValueError):
    """Raised when a caller breaks an operation's precondition."""


@dataclass(frozen=True)
class PathModel:
    """Cost model of one path.

    A deterministic path has a fixed internal cost ``c_fixed``. A stochastic
    path alternates between ``c_L`` and ``c_H`` following a two-state Markov
    chain with hazard transitions ``q_LH`` (low -> high) and ``q_HH``
    (high -> high). ``congestion`` scales the flow-dependent cost term.
    """

    kind: str
    c_fixed: float = 0.0
    c_L: float = 0.0
    c_H: float = 0.0
    q_LH: float = 0.0
    q_HH: float = 0.0
    congestion: float = 1.0

    def __post_init__(self):
        if self.kind not in ("deterministic", "stochastic"):
            raise ContractViolation(f"unknown path kind {self.kind!r}")
        if not self.congestion > 0:
            raise ContractViolation("congestion coefficient must be positive")
        if self.kind == "stochastic":
            if not (0.0 < self.q_LH < 1.0 and 0.0 < self.q_HH < 1.0):
                raise ContractViolation("transition probabilities must lie in (0, 1)")
            if not self.q_LH < 1.0 - self.q_LH:
                raise ContractViolation("need q_LH < q_LL")
            if not 1.0 - self.q_HH < self.q_HH:
                raise ContractViolation("need q_HL < q_HH")
            # c_L == c_H is admitted as the degenerate chain used in tests.
            if self.c_L > self.c_H:
                raise ContractViolation("need c_L <= c_H")

    @classmethod
    def deterministic(cls, cost: float, congestion: float = 1.0) -> "PathModel":
        return cls("deterministic", c_fixed=float(cost), congestion=congestion)

    @classmethod
    def stochastic(cls, c_L, c_H, q_LH, q_HH, congestion=1.0) -> "PathModel":
        return cls("stochastic", c_L=float(c_L), c_H=float(c_H),
                   q_LH=float(q_LH), q_HH=float(q_HH), congestion=congestion)

    @property
    def is_stochastic(self) -> bool:
        return self.kind == "stochastic"

    @property
    def q_LL(self) -> float:
        return 1.0 - self.q_LH

    @property
    def q_HL(self) -> float:
        return 1.0 - self.q_HH

    @property
    def stationary_hazard(self) -> float:
        """Long-run fraction of time spent in the high-cost state."""
        return self.q_LH / (self.q_LH + 1.0 - self.q_HH)

    def expected_cost(self, x: float) -> float:
        return x * self.c_H + (1.0 - x) * self.c_L


def expected_internal_cost(path: PathModel, x: float) -> float:
    """E[c_i | x_i] = x c_H + (1 - x) c_L for a stochastic path."""
    if not path.is_stochastic:
        raise ContractViolation("expected_internal_cost needs a stochastic path")
    if not -MASS_TOL <= x <= 1.0 + MASS_TOL:
        raise ContractViolation(f"belief {x} outside [0, 1]")
    return path.expected_cost(x)


@dataclass(frozen=True)
class NetworkConfig:
    """Parallel network: path 0 deterministic plus N stochastic paths."""

    deterministic_path: PathModel
    stochastic_paths: tuple
    rho: float
    epsilon: float
    arrival_mass: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "stochastic_paths", tuple(self.stochastic_paths))
        if self.deterministic_path.kind != "deterministic":
            raise ContractViolation("path 0 must be deterministic")
        if len(self.stochastic_paths) < 1:
            raise ContractViolation("need at least one stochastic path")
        if any(not p.is_stochastic for p in self.stochastic_paths):
            raise ContractViolation("paths 1..N must be stochastic")
        if not 0.0 < self.rho < 1.0:
            raise ContractViolation("rho must lie in (0, 1)")
        if not self.epsilon > 0.0:
            raise ContractViolation("epsilon must be positive")
        if not self.arrival_mass > 0.0:
            raise ContractViolation("arrival_mass must be positive")

    @property
    def N(self) -> int:
        return len(self.stochastic_paths)

    @property
    def c0(self) -> float:
        return self.deterministic_path.c_fixed

    @property
    def paths(self) -> tuple:
        return (self.deterministic_path,) + self.stochastic_paths

    def slopes(self) -> list:
        return [p.congestion for p in self.paths]

    def expected_costs(self, x: Sequence[float]) -> list:
        """Standalone internal costs of all N+1 paths under beliefs ``x``."""
        if len(x) != self.N:
            raise ContractViolation(f"belief vector has {len(x)} entries, need {self.N}")
        return [self.c0] + [p.expected_cost(xi) for p, xi in zip(self.stochastic_paths, x)]

    def is_nontrivial(self) -> bool:
        """Each stochastic path is attractive when good and worse than path 0 when bad."""
        return all(p.expected_cost(p.q_LH) < self.c0 < p.expected_cost(p.q_HH)
                   for p in self.stochastic_paths)

    def max_immediate_cost(self) -> float:
        """Upper bound on the immediate social cost of any allocation."""
        m = self.arrival_mass
        worst_internal = max([self.c0] + [p.c_H for p in self.stochastic_paths])
        worst_slope = max(self.slopes())
        return m * (worst_internal + worst_slope * m)

    def with_(self, **changes) -> "NetworkConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class FlowAllocation:
    """Nonnegative flow on paths 0..N summing to the arrival mass."""

    f: tuple
    mass: float = 1.0

    def __post_init__(self):
        f = tuple(float(v) for v in self.f)
        object.__setattr__(self, "f", f)
        for v in f:
            if v < -MASS_TOL or v > self.mass + MASS_TOL or math.isnan(v):
                raise ContractViolation(f"flow component {v} outside [0, {self.mass}]")
        if abs(math.fsum(f) - self.mass) > MASS_TOL * max(1.0, self.mass):
            raise ContractViolation(f"flows sum to {math.fsum(f)}, expected {self.mass}")

    @classmethod
    def from_stochastic(cls, stochastic: Iterable[float], mass: float = 1.0) -> "FlowAllocation":
        """Build an allocation whose path-0 share is the remaining mass."""
        s = [max(0.0, float(v)) for v in stochastic]
        f0 = mass - math.fsum(s)
        if -MASS_TOL * max(1.0, mass) < f0 < 0.0:
            f0 = 0.0
        return cls((f0, *s), mass)

    def __len__(self):
        return len(self.f)

    def __getitem__(self, i):
        return self.f[i]

    def __iter__(self):
        return iter(self.f)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.f)


@dataclass(frozen=True)
class PathRealization:
    """Realized internal cost state of each stochastic path (True = high)."""

    high: tuple
    costs: tuple = field(default=())

    @classmethod
    def from_states(cls, config: NetworkConfig, high: Sequence[bool]) -> "PathRealization":
        costs = tuple(p.c_H if h else p.c_L for p, h in zip(config.stochastic_paths, high))
        return cls(tuple(bool(h) for h in high), costs)


def immediate_social_cost(config: NetworkConfig, flows, x: Sequence[float]) -> float:
    """f_0 (c_0 + f_0) + sum_i f_i (E[c_i | x_i] + f_i), congestion-weighted."""
    f = flows.f if isinstance(flows, FlowAllocation) else tuple(flows)
    if len(f) != config.N + 1:
        raise ContractViolation(f"flow vector has {len(f)} entries, need {config.N + 1}")
    a = config.expected_costs(x)
    total = 0.0
    for fi, ai, p in zip(f, a, config.paths):
        total += fi * (ai + p.congestion * fi)
    return total
