"""Flow solvers for sharing equilibria, hiding-class flows and the social optimum.

All path latencies are affine, ``a_p + k_p f_p``, so both the selfish
equilibrium and the socially optimal split are water-filling problems:
flows equalize a common level (cost for the equilibrium, marginal cost for the
optimum) over the paths that are above their lower bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

from .core import BOUNDARY_TOL, ContractViolation, FlowAllocation, NetworkConfig

QCompare = Union[None, bool, Callable[[tuple, int], bool]]


def waterfill(a: Sequence[float], slope: Sequence[float], lower: Sequence[float], mass: float):
    """Solve sum_p max(lower_p, (lam - a_p) / slope_p) = mass for lam.

    Returns ``(flows, lam)``. A path whose breakpoint ``a_p + slope_p lower_p``
    equals ``lam`` stays at its lower bound.
    """
    n = len(a)
    base = math.fsum(lower)
    if base > mass + 1e-12:
        raise ContractViolation(f"lower bounds {base} exceed arrival mass {mass}")
    order = sorted(range(n), key=lambda p: a[p] + slope[p] * lower[p])
    inv_sum = 0.0
    a_over_s = 0.0
    fixed = base
    lam = None
    for k, p in enumerate(order):
        inv_sum += 1.0 / slope[p]
        a_over_s += a[p] / slope[p]
        fixed -= lower[p]
        lam = (mass - fixed + a_over_s) / inv_sum
        if k + 1 == n:
            break
        nxt = order[k + 1]
        if lam <= a[nxt] + slope[nxt] * lower[nxt]:
            break
    flows = [max(lower[p], (lam - a[p]) / slope[p]) for p in range(n)]
    # Re-absorb rounding so the allocation sums exactly to the mass.
    active = [p for p in range(n) if flows[p] > lower[p]]
    if active:
        drift = mass - math.fsum(flows)
        j = max(active, key=lambda p: flows[p])
        flows[j] += drift
    return flows, lam


@dataclass(frozen=True)
class EquilibriumResult:
    flows: FlowAllocation
    common_cost: float
    used_set: frozenset
    exploration_flags: tuple

    @property
    def f(self):
        return self.flows.f


def _resolve_q(q_compare: QCompare, config: NetworkConfig) -> Callable[[tuple, int], bool]:
    if q_compare is None:
        from .mdp import exploration_oracle
        return exploration_oracle(config)
    if isinstance(q_compare, bool):
        return lambda x, i, _v=q_compare: _v
    return q_compare


def sharing_flow_two_path(config: NetworkConfig, x1: float, q_compare: QCompare = None) -> EquilibriumResult:
    """Closed-form sharing equilibrium on the two-path network."""
    if config.N != 1:
        raise ContractViolation("sharing_flow_two_path needs exactly one stochastic path")
    m = config.arrival_mass
    k0 = config.deterministic_path.congestion
    k1 = config.stochastic_paths[0].congestion
    c0 = config.c0
    e1 = config.stochastic_paths[0].expected_cost(x1)
    explore = False
    if e1 > c0 + k0 * m + BOUNDARY_TOL:
        explore = bool(_resolve_q(q_compare, config)((x1,), 1))
        f1 = config.epsilon if explore else 0.0
    elif e1 <= c0 - k1 * m:
        f1 = m
    else:
        f1 = min(m, max(0.0, (k0 * m + c0 - e1) / (k0 + k1)))
    f0 = m - f1
    flows = FlowAllocation((f0, f1), m)
    cost = c0 + k0 * f0 if f0 > 0 else e1 + k1 * f1
    used = frozenset(p for p, v in enumerate(flows.f) if v > 0)
    return EquilibriumResult(flows, cost, used, (explore,))


def sharing_flow_general(config: NetworkConfig, x: Sequence[float], q_compare: QCompare = None) -> EquilibriumResult:
    """Selfish equilibrium on N+1 parallel paths under public beliefs ``x``.

    Paths equalize ``E[c] + k f``; an unused stochastic path strictly costlier
    than the common level is pinned to epsilon when the exploration test says
    a lone explorer would come out ahead, and the rest re-equilibrates.
    """
    x = tuple(x)
    m = config.arrival_mass
    a = config.expected_costs(x)
    k = config.slopes()
    n = config.N + 1
    flows, lam = waterfill(a, k, [0.0] * n, m)
    flags = [False] * config.N
    pinned = []
    oracle = None
    for i in range(1, n):
        if flows[i] <= 0.0 and a[i] > lam + BOUNDARY_TOL:
            if oracle is None:
                oracle = _resolve_q(q_compare, config)
            if oracle(x, i):
                flags[i - 1] = True
                pinned.append(i)
    if pinned:
        eps = config.epsilon
        rest = [p for p in range(n) if p not in pinned]
        sub, lam = waterfill([a[p] for p in rest], [k[p] for p in rest], [0.0] * len(rest),
                             m - eps * len(pinned))
        flows = [0.0] * n
        for p, v in zip(rest, sub):
            flows[p] = v
        for p in pinned:
            flows[p] = eps
    alloc = FlowAllocation(flows, m)
    used = frozenset(p for p in range(n) if alloc.f[p] > 0.0)
    return EquilibriumResult(alloc, lam, used, tuple(flags))


def path_costs(config: NetworkConfig, x: Sequence[float], flows: Sequence[float]) -> list:
    """Individual travel cost E[c_p] + k_p f_p on every path."""
    a = config.expected_costs(x)
    return [ap + p.congestion * fp for ap, p, fp in zip(a, config.paths, flows)]


def social_optimal_flow_two_path(config: NetworkConfig, x1: float) -> FlowAllocation:
    """Closed-form optimum on the two-path network, never below epsilon."""
    if config.N != 1:
        raise ContractViolation("social_optimal_flow_two_path needs exactly one stochastic path")
    m = config.arrival_mass
    k0 = config.deterministic_path.congestion
    k1 = config.stochastic_paths[0].congestion
    e1 = config.stochastic_paths[0].expected_cost(x1)
    f1 = (2.0 * k0 * m + config.c0 - e1) / (2.0 * (k0 + k1))
    f1 = min(m, max(config.epsilon, f1))
    return FlowAllocation((m - f1, f1), m)


def social_optimal_flow_general(config: NetworkConfig, x: Sequence[float]) -> FlowAllocation:
    """Minimize the immediate social cost subject to f_i >= epsilon on stochastic paths.

    KKT: every path above its bound has marginal cost E[c] + 2 k f equal to a
    common multiplier.
    """
    a = config.expected_costs(tuple(x))
    slope = [2.0 * s for s in config.slopes()]
    lower = [0.0] + [config.epsilon] * config.N
    flows, _ = waterfill(a, slope, lower, config.arrival_mass)
    return FlowAllocation(flows, config.arrival_mass)


def max_exploit_flow(config: NetworkConfig, n: int, x_good: Optional[float] = None, i: int = 1) -> float:
    """Largest selfish flow on each of ``n`` good paths when the rest stay empty.

    min{m / n, (c_0 + k_0 m - E[c_i | q_LH]) / (k_i + n k_0)}.
    """
    if not 1 <= n <= config.N:
        raise ContractViolation(f"n={n} outside 1..{config.N}")
    path = config.stochastic_paths[i - 1]
    if x_good is None:
        x_good = path.q_LH
    m = config.arrival_mass
    k0 = config.deterministic_path.congestion
    e = path.expected_cost(x_good)
    return min(m / n, (config.c0 + k0 * m - e) / (path.congestion + n * k0))


def hiding_split(f_prev: float, fs_age2: float, fs_age1: float, mass: float = 1.0):
    """Age-2 and age-1 flows on one path.

    Age-2 users each pick the path with probability fs_age2 / mass; the
    f_prev users who just travelled it top the total up towards fs_age1 but
    cannot exceed their own mass.
    """
    f2 = (mass - f_prev) * fs_age2 / mass
    f1 = min(max(fs_age1 - f2, 0.0), f_prev)
    return f1, f2


@dataclass(frozen=True)
class HidingFlows:
    age1: tuple
    age2: tuple
    flows: FlowAllocation
    # (total if x_i(t) = q_LH, total if x_i(t) = q_HH) per path, as age-2 users can predict.
    predictions: tuple

    @property
    def totals(self) -> tuple:
        return tuple(a + b for a, b in zip(self.age1, self.age2))


def hiding_flows(config: NetworkConfig, x: Sequence[float], profile, q_compare: QCompare = None,
                 prev_flows: Optional[Sequence[float]] = None) -> HidingFlows:
    """Per-class flows when the platform hides its beliefs.

    ``x`` is the public belief (known to each path's age-1 class), ``profile``
    a :class:`PrivateBeliefProfile`. Age-1 users on path i evaluate the
    equilibrium with x_i in place of their stale y_{i,2}.
    """
    m = config.arrival_mass
    N = config.N
    if prev_flows is None:
        prev_flows = profile.flows_prev
    prev = [0.0] * (N + 1) if prev_flows is None else list(prev_flows)
    y2 = tuple(profile.y2)
    g = sharing_flow_general(config, y2, q_compare).f

    def fs_with(i, xi):
        if xi == y2[i - 1]:
            return g[i]
        y = list(y2)
        y[i - 1] = xi
        return sharing_flow_general(config, y, q_compare).f[i]

    age1, age2, preds = [], [], []
    for i in range(1, N + 1):
        path = config.stochastic_paths[i - 1]
        f1, f2 = hiding_split(prev[i], g[i], fs_with(i, x[i - 1]), m)
        age1.append(f1)
        age2.append(f2)
        if prev[i] > 0.0:
            lo = sum(hiding_split(prev[i], g[i], fs_with(i, path.q_LH), m))
            hi = sum(hiding_split(prev[i], g[i], fs_with(i, path.q_HH), m))
            preds.append((lo, hi))
        else:
            preds.append(None)
    totals = [a + b for a, b in zip(age1, age2)]
    s = math.fsum(totals)
    if s > m:
        # The literal class equations can double count for N >= 2.
        totals = [v * m / s for v in totals]
    alloc = FlowAllocation.from_stochastic(totals, m)
    return HidingFlows(tuple(age1), tuple(age2), alloc, tuple(preds))
