"""Price-of-anarchy estimates, closed-form bounds and worst-case scenario builders."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import ContractViolation, NetworkConfig, PathModel
from .mdp import value_iteration_optimum
from .simulate import run_batch

DEFAULT_DELTA = 1e-3


def _k(q_HH: float, delta: float) -> int:
    if not 0.0 < delta < 1.0:
        raise ContractViolation("delta must lie in (0, 1)")
    if not 0.0 < q_HH < 1.0:
        raise ContractViolation("q_HH must lie in (0, 1)")
    return int(math.ceil(math.log(delta) / math.log(q_HH)))


def _denominator(rho: float, prod: float, q_HH: float, N: int, delta: float) -> float:
    k = _k(q_HH, delta)
    return 1.0 - rho + (rho - rho ** (k / N)) * prod


def sharing_poa_bound(rho: float, x0: Sequence[float], q_HH: float, delta: float = DEFAULT_DELTA) -> float:
    """Lower bound on the sharing PoA from never re-exploring a path seen bad.

    (1 - rho + rho P) / (1 - rho + (rho - rho^(k/N)) P), P = prod x_i(0),
    k = ceil(log_{q_HH} delta).
    """
    x0 = tuple(x0)
    prod = math.prod(x0)
    return (1.0 - rho + rho * prod) / _denominator(rho, prod, q_HH, len(x0), delta)


def hiding_poa_bound(rho: float, x0: Sequence[float], q_HH: float, delta: float = DEFAULT_DELTA) -> float:
    """As :func:`sharing_poa_bound` with numerator 1 - rho^2 + rho^2 P (one extra slot of delay)."""
    x0 = tuple(x0)
    prod = math.prod(x0)
    return (1.0 - rho ** 2 + rho ** 2 * prod) / _denominator(rho, prod, q_HH, len(x0), delta)


def upr_poa_value(N: int) -> float:
    if N < 1:
        raise ContractViolation("N must be >= 1")
    return 1.0 + 1.0 / (4 * N + 3)


@dataclass(frozen=True)
class PoAScenario:
    kind: str
    dial: float
    N: int
    config: NetworkConfig
    x0: tuple
    delta: float = DEFAULT_DELTA
    params: dict = field(default_factory=dict, compare=False)

    @property
    def q_HH(self) -> float:
        return self.config.stochastic_paths[0].q_HH

    def bound(self, mechanism: str) -> float:
        rho = self.config.rho
        if mechanism == "sharing":
            return sharing_poa_bound(rho, self.x0, self.q_HH, self.delta)
        if mechanism in ("hiding", "deterministic"):
            return hiding_poa_bound(rho, self.x0, self.q_HH, self.delta)
        if mechanism == "upr":
            return upr_poa_value(self.N)
        if mechanism == "optimum":
            return 1.0
        raise ContractViolation(f"no bound for mechanism {mechanism!r}")


# Minimum-exploration scenario. All rates are per slot.
_MINEX_RHO = 0.99
_MINEX_PROD = 0.03


def _minimum_exploration(kind: str, dial: float, N: int, delta: float) -> PoAScenario:
    """Paths that sharing abandons for good once they are seen bad.

    Raising the dial moves the chain towards the limiting premises:
    1 - q_HH = 0.05 - 0.015 dial, (1 - q_LL) / (1 - q_HH) = 0.03 * 10^(-dial/2),
    c_0 = 10^(1 + dial) and c_H = (c_0 + 1) / x_i(0) with prod x_i(0) = 0.03.
    The discount factor stays at 0.99 so the evaluation horizon stays affordable.
    """
    q_HL = 0.05 - 0.015 * dial
    q_LH = 0.03 * 10 ** (-0.5 * dial) * q_HL
    c0 = 10 ** (1.0 + dial)
    c_H = (c0 + 1.0) / _MINEX_PROD ** (1.0 / N)
    eps = 1e-3 / c_H
    # E[c_i(0) | x_i(0)] sits 2 eps below c_0 + 1, so the opening flow is exactly eps.
    x0 = (c0 + 1.0 - 2.0 * eps) / c_H
    path = PathModel.stochastic(0.0, c_H, q_LH, 1.0 - q_HL)
    config = NetworkConfig(PathModel.deterministic(c0), [path] * N, _MINEX_RHO, eps)
    params = dict(q_HL=q_HL, q_LH=q_LH, c_H=c_H, c0=c0, epsilon=eps, rho=_MINEX_RHO)
    return PoAScenario(kind, dial, N, config, (x0,) * N, delta, params)


def _maximum_exploration(dial: float, N: int, delta: float) -> PoAScenario:
    """Every path starts good and stays good; selfish users crowd all of them.

    E[c_i | q_LH] + 1/N = c_0, so sharing sends 1/N to each stochastic path
    and leaves the deterministic path empty.
    """
    q_LH = 10 ** (-4 - 4 * dial)
    q_HH = 0.9
    c_H = 20.0
    e_low = q_LH * c_H
    c0 = e_low + 1.0 / N
    eps = 1e-9
    path = PathModel.stochastic(0.0, c_H, q_LH, q_HH)
    config = NetworkConfig(PathModel.deterministic(c0), [path] * N, 0.9, eps)
    params = dict(q_LH=q_LH, q_HH=q_HH, c_H=c_H, c0=c0, epsilon=eps, rho=0.9)
    return PoAScenario("prop3", dial, N, config, (q_LH,) * N, delta, params)


def worst_case_scenario(kind: str, dial: float, N: int = 1, delta: float = DEFAULT_DELTA) -> PoAScenario:
    kind = kind.lower()
    if not 0.0 < dial < 1.0:
        raise ContractViolation("dial must lie in (0, 1)")
    if N < 1:
        raise ContractViolation("N must be >= 1")
    if kind in ("prop1", "prop2"):
        return _minimum_exploration(kind, dial, N, delta)
    if kind == "prop3":
        return _maximum_exploration(dial, N, delta)
    raise ContractViolation(f"unknown scenario kind {kind!r}")


@dataclass(frozen=True)
class PoAEstimate:
    ratio: float
    stderr: float
    mechanism_cost: float
    mechanism_stderr: float
    optimum_cost: float
    optimum_stderr: float
    episodes: int
    horizon: int


def poa_estimate(config: NetworkConfig, mechanism, x0: Sequence[float], T: Optional[int] = None,
                 M: int = 200, seed: int = 0, threads: int = 1, optimum: str = "exact") -> PoAEstimate:
    """Mechanism cost over the planner's cost from the same initial beliefs.

    ``optimum='exact'`` takes C* from the collapsed-state value function;
    ``'simulate'`` runs the planner on the same seeds instead.
    """
    from .mechanisms import SocialOptimum

    summary = run_batch(config, mechanism, x0, T, M, seed, threads=threads)
    if optimum == "exact":
        c_star = value_iteration_optimum(config).value_at(x0)
        c_star_se = 0.0
    elif optimum == "simulate":
        opt = run_batch(config, SocialOptimum(), x0, summary.horizon, M, seed, threads=threads)
        c_star, c_star_se = opt.mean, opt.stderr
    else:
        raise ContractViolation("optimum must be 'exact' or 'simulate'")
    ratio = summary.mean / c_star
    stderr = ratio * math.hypot(summary.stderr / summary.mean if summary.mean else 0.0, c_star_se / c_star)
    return PoAEstimate(ratio, stderr, summary.mean, summary.stderr, c_star, c_star_se,
                       summary.episodes, summary.horizon)
