"""Discounted-cost evaluation and the exploration oracle.

Two pieces live here:

* ``q_exploration_test`` answers whether one non-myopic user would rather
  explore an abandoned stochastic path (paying its expected cost now, learning
  its state) than wait on the cheapest alternative. It solves that user's
  optimal stopping problem exactly along the belief drift chains.
* ``value_iteration_optimum`` computes the planner's long-run cost. Because the
  planner keeps at least epsilon flow on every stochastic path, each belief is
  q_LH or q_HH after one step and the next-state distribution does not depend
  on the flows, so the Bellman minimization is myopic over 2^N states.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BOUNDARY_TOL, ContractViolation, FlowAllocation, NetworkConfig, immediate_social_cost
from .equilibrium import social_optimal_flow_general, waterfill


class NonConvergence(RuntimeError):
    """An iterative solver hit its iteration cap."""


# --------------------------------------------------------------------------
# Single-user exploration oracle
# --------------------------------------------------------------------------

_CHAIN_EPS = 1e-16


class _StoppingProblem:
    """One user's explore-or-wait problem on stochastic path ``i``.

    The other paths' beliefs are frozen at the query point. While path i is
    unused the user either waits (cost ``c_alt``, belief drifts one step) or
    explores (cost E[c_i] + k_i eps, state revealed). While path i is used by
    the crowd the user pays the common cost and learns the state for free.
    Values at the two collapsed beliefs, V_L = V(q_LH) and V_H = V(q_HH), are
    found by policy iteration.
    """

    def __init__(self, config: NetworkConfig, i: int, x: tuple):
        self.config = config
        self.i = i
        self.path = config.stochastic_paths[i - 1]
        self.rho = config.rho
        m = config.arrival_mass
        a = config.expected_costs(x)
        k = config.slopes()
        rest = [p for p in range(config.N + 1) if p != i]
        _, self.c_alt = waterfill([a[p] for p in rest], [k[p] for p in rest], [0.0] * len(rest), m)
        self._a = list(a)
        self._k = k
        self.explore_premium = self.path.congestion * config.epsilon
        vmax = max(config.max_immediate_cost(), self.c_alt) / (1.0 - self.rho)
        self.horizon = max(1, int(math.ceil(math.log(1e-14 / max(vmax, 1.0)) / math.log(self.rho))))
        self.values = {}
        self._solve()

    # Immediate quantities -------------------------------------------------
    def _advance(self, z):
        p = self.path
        return z * p.q_HH + (1.0 - z) * p.q_LH

    def _used_cost(self, z):
        """Common equilibrium cost when the crowd uses path i at belief z, else None."""
        e = self.path.expected_cost(z)
        if e >= self.c_alt:
            return None
        a = list(self._a)
        a[self.i] = e
        _, lam = waterfill(a, self._k, [0.0] * len(a), self.config.arrival_mass)
        return lam

    def _chain(self, z0):
        zs = [z0]
        for _ in range(self.horizon):
            nxt = self._advance(zs[-1])
            if abs(nxt - zs[-1]) <= _CHAIN_EPS:
                break
            zs.append(nxt)
        return zs

    # Backward passes --------------------------------------------------------
    def _tail_value(self, z, vl, vh):
        j = (1.0 - z) * vl + z * vh
        used = self._used_cost(z)
        if used is not None:
            return used + self.rho * j, "used"
        explore = self.path.expected_cost(z) + self.explore_premium + self.rho * j
        wait = self.c_alt / (1.0 - self.rho)
        return (explore, "explore") if explore <= wait else (wait, "wait")

    def _numeric_pass(self, zs, vl, vh):
        """Optimal values and decisions along a chain given V_L, V_H."""
        n = len(zs)
        vals = [0.0] * n
        acts = [""] * n
        vals[-1], acts[-1] = self._tail_value(zs[-1], vl, vh)
        for k in range(n - 2, -1, -1):
            z = zs[k]
            j = (1.0 - z) * vl + z * vh
            used = self._used_cost(z)
            if used is not None:
                vals[k], acts[k] = used + self.rho * j, "used"
                continue
            explore = self.path.expected_cost(z) + self.explore_premium + self.rho * j
            wait = self.c_alt + self.rho * vals[k + 1]
            if explore <= wait:
                vals[k], acts[k] = explore, "explore"
            else:
                vals[k], acts[k] = wait, "wait"
        return vals, acts

    def _affine_pass(self, zs, acts):
        """Value at the chain head as (const, coef_L, coef_H) for fixed decisions."""
        rho = self.rho
        c = l = h = 0.0
        last = len(zs) - 1
        for k in range(last, -1, -1):
            z = zs[k]
            act = acts[k]
            if act == "wait":
                if k == last:
                    c, l, h = self.c_alt / (1.0 - rho), 0.0, 0.0
                else:
                    c, l, h = self.c_alt + rho * c, rho * l, rho * h
            else:
                base = self._used_cost(z) if act == "used" else (
                    self.path.expected_cost(z) + self.explore_premium)
                c, l, h = base, rho * (1.0 - z), rho * z
        return c, l, h

    def _solve(self):
        p = self.path
        self.chain_L = self._chain(p.q_LH)
        self.chain_H = self._chain(p.q_HH)
        vl = vh = self.c_alt / (1.0 - self.rho)
        prev = None
        for _ in range(200):
            _, acts_L = self._numeric_pass(self.chain_L, vl, vh)
            _, acts_H = self._numeric_pass(self.chain_H, vl, vh)
            key = (tuple(acts_L), tuple(acts_H))
            if key == prev:
                break
            prev = key
            cL, lL, hL = self._affine_pass(self.chain_L, acts_L)
            cH, lH, hH = self._affine_pass(self.chain_H, acts_H)
            # V_L = cL + lL V_L + hL V_H ; V_H = cH + lH V_L + hH V_H
            mat = np.array([[1.0 - lL, -hL], [-lH, 1.0 - hH]])
            vl, vh = np.linalg.solve(mat, np.array([cL, cH])).tolist()
        else:
            raise NonConvergence("exploration oracle policy iteration did not settle")
        self.vl, self.vh = vl, vh
        for zs in (self.chain_L, self.chain_H):
            vals, _ = self._numeric_pass(zs, vl, vh)
            self.values.update(zip(zs, vals))

    def _value(self, z):
        v = self.values.get(z)
        if v is None:
            zs = self._chain(z)
            vals, _ = self._numeric_pass(zs, self.vl, self.vh)
            self.values.update(zip(zs, vals))
            v = vals[0]
        return v

    def explore_beats_waiting(self, z) -> bool:
        j = (1.0 - z) * self.vl + z * self.vh
        explore = self.path.expected_cost(z) + self.explore_premium + self.rho * j
        wait = self.c_alt + self.rho * self._value(self._advance(z))
        return explore <= wait


class ExplorationOracle:
    """Cached ``q_compare`` callable for one network."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self._problems = {}
        self._answers = {}

    def __call__(self, x: Sequence[float], i: int) -> bool:
        x = tuple(x)
        hit = self._answers.get((x, i))
        if hit is not None:
            return hit
        ans = self._decide(x, i)
        self._answers[(x, i)] = ans
        return ans

    def _decide(self, x, i):
        config = self.config
        path = config.stochastic_paths[i - 1]
        if path.c_H <= path.c_L:
            return False  # nothing to learn
        a = config.expected_costs(x)
        flows, lam = waterfill(a, config.slopes(), [0.0] * (config.N + 1), config.arrival_mass)
        if flows[i] > 0.0 or a[i] <= lam + BOUNDARY_TOL:
            return False
        others = tuple(v for j, v in enumerate(x) if j != i - 1)
        key = (i, others)
        prob = self._problems.get(key)
        if prob is None:
            prob = _StoppingProblem(config, i, x)
            self._problems[key] = prob
        return prob.explore_beats_waiting(x[i - 1])


_ORACLES: dict = {}


def exploration_oracle(config: NetworkConfig) -> ExplorationOracle:
    oracle = _ORACLES.get(config)
    if oracle is None:
        if len(_ORACLES) > 256:
            _ORACLES.clear()
        oracle = _ORACLES[config] = ExplorationOracle(config)
    return oracle


def q_exploration_test(config: NetworkConfig, x: Sequence[float], i: int) -> bool:
    """True iff a lone user lowers its discounted cost by exploring path ``i`` now.

    Only meaningful when path i is unused and strictly costlier than the
    equilibrium level; otherwise returns False.
    """
    if not 1 <= i <= config.N:
        raise ContractViolation(f"path index {i} outside 1..{config.N}")
    return exploration_oracle(config)(tuple(x), i)


# --------------------------------------------------------------------------
# Planner's value function
# --------------------------------------------------------------------------

def _belief_of(config: NetworkConfig, state: tuple) -> tuple:
    return tuple(p.q_HH if s else p.q_LH for p, s in zip(config.stochastic_paths, state))


@dataclass
class ValueFunction:
    """C* over collapsed states; ``values[s]`` with s a 0/1 tuple (1 = q_HH)."""

    config: NetworkConfig
    values: np.ndarray
    immediate: np.ndarray
    sweeps: int
    residual: float
    _policy: dict = field(default_factory=dict, repr=False)

    def value(self, state: Sequence[int]) -> float:
        return float(self.values[tuple(int(s) for s in state)])

    def policy(self, state: Sequence[int]) -> FlowAllocation:
        state = tuple(int(s) for s in state)
        if state not in self._policy:
            self._policy[state] = social_optimal_flow_general(self.config, _belief_of(self.config, state))
        return self._policy[state]

    def expected_next(self, x: Sequence[float]) -> float:
        """E[C*(x(t+1))] when every path is observed under beliefs ``x``."""
        v = self.values
        for axis, xi in enumerate(x):
            v = np.tensordot(np.array([1.0 - xi, xi]), v, axes=([0], [0]))
        return float(v)

    def value_at(self, x0: Sequence[float]) -> float:
        """C*(x0) for an arbitrary belief vector, by one-step lookahead."""
        x0 = tuple(float(v) for v in x0)
        flows = social_optimal_flow_general(self.config, x0)
        return immediate_social_cost(self.config, flows, x0) + self.config.rho * self.expected_next(x0)

    def bellman_residual(self) -> float:
        return float(np.max(np.abs(self.immediate + self.config.rho * _expect(self.config, self.values)
                                   - self.values)))


def _transition_matrices(config: NetworkConfig):
    return [np.array([[1.0 - p.q_LH, p.q_LH], [1.0 - p.q_HH, p.q_HH]]) for p in config.stochastic_paths]


def _expect(config: NetworkConfig, values: np.ndarray) -> np.ndarray:
    """E[V(s') | s] with independent per-path transitions."""
    out = values
    for axis, mat in enumerate(_transition_matrices(config)):
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [axis])), 0, axis)
    return out


def value_iteration_optimum(config: NetworkConfig, max_sweeps: int = 10**6,
                            max_paths: int = 16) -> ValueFunction:
    """Planner's discounted cost on the collapsed belief states.

    Stops when the sup-norm change drops below (1 - rho) 1e-8. The iteration
    is started from the exact solution of the (flow-independent) linear
    system for N <= 12, so it normally confirms convergence in one sweep.
    """
    N = config.N
    if N > max_paths:
        raise ContractViolation(f"exact DP limited to N <= {max_paths}; use Monte Carlo")
    shape = (2,) * N
    immediate = np.empty(shape)
    for state in itertools.product((0, 1), repeat=N):
        x = _belief_of(config, state)
        immediate[state] = immediate_social_cost(config, social_optimal_flow_general(config, x), x)
    rho = config.rho
    if N <= 12:
        size = 2 ** N
        P = np.ones((1, 1))
        for mat in _transition_matrices(config):
            P = np.kron(P, mat)
        values = np.linalg.solve(np.eye(size) - rho * P, immediate.reshape(size)).reshape(shape)
    else:
        values = np.zeros(shape)
    tol = (1.0 - rho) * 1e-8
    for sweep in range(1, max_sweeps + 1):
        new = immediate + rho * _expect(config, values)
        change = float(np.max(np.abs(new - values)))
        values = new
        if change < tol:
            break
    else:
        raise NonConvergence(f"value iteration did not converge in {max_sweeps} sweeps")
    vf = ValueFunction(config, values, immediate, sweep, 0.0)
    vf.residual = vf.bellman_residual()
    return vf


# --------------------------------------------------------------------------
# Monte Carlo policy evaluation
# --------------------------------------------------------------------------

def auto_horizon(config: NetworkConfig, tol: float = 1e-6, max_cost: Optional[float] = None) -> int:
    """Smallest T with rho^T max_cost / (1 - rho) < tol."""
    if max_cost is None:
        max_cost = config.max_immediate_cost()
    rho = config.rho
    return max(1, int(math.ceil(math.log(tol * (1.0 - rho) / max_cost) / math.log(rho))))


@dataclass(frozen=True)
class PolicyCost:
    mean: float
    stderr: float
    episodes: int
    horizon: int
    totals: tuple = ()


def evaluate_policy_cost(config: NetworkConfig, mechanism, x0: Sequence[float], T: Optional[int] = None,
                         M: int = 100, seed: int = 0, threads: int = 1) -> PolicyCost:
    """Mean discounted social cost of ``mechanism`` over M seeded episodes."""
    from .simulate import run_batch

    if T is not None and T < 1:
        raise ContractViolation("horizon must be >= 1")
    if M < 1:
        raise ContractViolation("need at least one episode")
    summary = run_batch(config, mechanism, x0, T, M, seed, threads=threads)
    return PolicyCost(summary.mean, summary.stderr, summary.episodes, summary.horizon, summary.totals)
