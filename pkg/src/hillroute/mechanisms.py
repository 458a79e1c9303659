"""Information mechanisms: what the platform reveals and the flows that result.

Every mechanism is driven through the same two calls per slot:
``step(state)`` returns the flows (and whatever was disclosed), and
``after(state, flows, x_next)`` lets the mechanism update any private user
information before the next slot. The platform itself always holds the
Bayes-correct public belief ``state.x``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .belief import PrivateBeliefProfile
from .core import ContractViolation, FlowAllocation, NetworkConfig
from .equilibrium import (
    QCompare,
    hiding_flows,
    max_exploit_flow,
    sharing_flow_general,
    social_optimal_flow_general,
)

GOOD_TOL = 1e-12


class MechanismKind(enum.Enum):
    SHARING = "sharing"
    HIDING = "hiding"
    DETERMINISTIC_RECOMMENDATION = "deterministic"
    UPR = "upr"
    SOCIAL_OPTIMUM = "optimum"


@dataclass(frozen=True)
class NetworkState:
    """Platform-side state at the start of slot t."""

    t: int
    x: tuple
    x_prev: Optional[tuple] = None
    flows_prev: Optional[tuple] = None

    @classmethod
    def initial(cls, x0: Sequence[float]) -> "NetworkState":
        return cls(0, tuple(float(v) for v in x0))


@dataclass(frozen=True)
class RecommendationSignal:
    target: int
    issued_to: tuple  # (path travelled at t-1, information age on that path)
    probability: float


@dataclass(frozen=True)
class MechanismStepOutput:
    flows: FlowAllocation
    disclosed: str
    signals: tuple = ()
    predictions: Optional[tuple] = None


# --------------------------------------------------------------------------
# Single-step functions
# --------------------------------------------------------------------------

def step_sharing(state: NetworkState, config: NetworkConfig, q_compare: QCompare = None) -> MechanismStepOutput:
    eq = sharing_flow_general(config, state.x, q_compare)
    return MechanismStepOutput(eq.flows, "beliefs")


def step_hiding(state: NetworkState, profile: PrivateBeliefProfile, config: NetworkConfig,
                q_compare: QCompare = None) -> MechanismStepOutput:
    h = hiding_flows(config, state.x, profile, q_compare)
    return MechanismStepOutput(h.flows, "previous flows", (), h.predictions)


def recommend_cheapest(state: NetworkState, config: NetworkConfig) -> int:
    costs = config.expected_costs(state.x)
    return min(range(len(costs)), key=lambda p: costs[p])


def step_deterministic_recommendation(state: NetworkState, profile: PrivateBeliefProfile,
                                      config: NetworkConfig, q_compare: QCompare = None,
                                      recommend: bool = True) -> MechanismStepOutput:
    """Recommend the cheapest path; users keep routing on their private beliefs.

    A deterministic signal carries no information a user can act on beyond
    what it already infers from the disclosed flows, so the flows are the
    hiding flows whether or not recommendations are issued.
    """
    h = hiding_flows(config, state.x, profile, q_compare)
    signals = ()
    if recommend:
        target = recommend_cheapest(state, config)
        signals = tuple(RecommendationSignal(target, (j, 2), 1.0) for j in range(config.N + 1))
    return MechanismStepOutput(h.flows, "previous flows + recommendation", signals, h.predictions)


def step_social_optimum(state: NetworkState, config: NetworkConfig) -> MechanismStepOutput:
    return MechanismStepOutput(social_optimal_flow_general(config, state.x), "planner")


# UPR ----------------------------------------------------------------------

def good_paths(config: NetworkConfig, x: Sequence[float]) -> list:
    """Indices (1-based) of stochastic paths whose belief sits at q_LH."""
    return [i for i, (p, xi) in enumerate(zip(config.stochastic_paths, x), start=1)
            if xi <= p.q_LH + GOOD_TOL]


def _fbar(config: NetworkConfig, n: int, i: int) -> float:
    return max_exploit_flow(config, n, i=i) if n >= 1 else 0.0


def upr_recommendation_probability(state: NetworkState, i: int, n_good: int, prev_flow_i: float,
                                   config: NetworkConfig) -> float:
    """Chance an age-2 user is sent to stochastic path ``i``.

    epsilon / m on a bad path, (fbar - prev) / (m - prev) on a good one.
    Raises unless fbar > prev (path i must be short of its selfish maximum).
    """
    path = config.stochastic_paths[i - 1]
    m = config.arrival_mass
    fbar = _fbar(config, max(n_good, 1), i)
    if not fbar > prev_flow_i:
        raise ContractViolation(f"path {i} is already at or above its maximum selfish flow")
    if state.x[i - 1] <= path.q_LH + GOOD_TOL:
        return (fbar - prev_flow_i) / (m - prev_flow_i)
    return config.epsilon / m


def upr_posterior(signal: int, state: NetworkState, prev_flow_i: float, config: NetworkConfig,
                  n_good: Optional[int] = None) -> float:
    """Pr(x_i(t) = q_LH | sent to path i) for an age-2 user, prior 1 - x_i(t-1)."""
    i = signal
    if state.x_prev is None:
        raise ContractViolation("posterior needs the previous belief")
    if n_good is None:
        n_good = max(1, len(good_paths(config, state.x)))
    m = config.arrival_mass
    fbar = _fbar(config, n_good, i)
    p_good = max(0.0, (fbar - prev_flow_i) / (m - prev_flow_i))
    p_bad = config.epsilon / m
    prior_bad = state.x_prev[i - 1]
    num = p_good * (1.0 - prior_bad)
    den = num + p_bad * prior_bad
    if den <= 0.0:
        raise ContractViolation("the signal has zero probability")
    return num / den


def upr_target_flows(config: NetworkConfig, x: Sequence[float], prev: Sequence[float],
                     q_compare: QCompare = None) -> tuple:
    """Expected UPR flows with obedient users, as an N+1 tuple.

    Good paths carry fbar; the others carry the larger of the age-1 selfish
    demand and the age-2 exploration (m - prev) eps / m.
    """
    m = config.arrival_mass
    eps = config.epsilon
    good = set(good_paths(config, x))
    n = len(good)
    selfish = None
    out = []
    for i in range(1, config.N + 1):
        if i in good:
            out.append(_fbar(config, n, i))
        else:
            if selfish is None:
                selfish = sharing_flow_general(config, x, q_compare).f
            out.append(max(selfish[i], (m - prev[i]) * eps / m))
    total = math.fsum(out)
    if total > m:
        bad_total = math.fsum(v for i, v in enumerate(out, start=1) if i not in good)
        good_total = total - bad_total
        scale = max(0.0, m - bad_total) / good_total if good_total > 0 else 0.0
        out = [v * scale if i in good else v for i, v in enumerate(out, start=1)]
        if math.fsum(out) > m:
            out = [v * m / math.fsum(out) for v in out]
    return FlowAllocation.from_stochastic(out, m).f


def upr_signal_distribution(config: NetworkConfig, x: Sequence[float], prev: Sequence[float],
                            cls: int) -> Dict[int, float]:
    """Signal distribution for users who travelled path ``cls`` at t-1.

    Users who saw a good path stay there; everybody else is sent to each
    eligible stochastic path (other than the one it just left) with the
    recommendation probability and to path 0 otherwise.
    """
    m = config.arrival_mass
    good = set(good_paths(config, x))
    if cls in good and prev[cls] > 0.0:
        return {cls: 1.0}
    n = len(good)
    dist = {}
    for i in range(1, config.N + 1):
        if i == cls:
            continue
        if i in good:
            fbar = _fbar(config, n, i)
            if fbar > prev[i]:
                dist[i] = (fbar - prev[i]) / (m - prev[i])
        else:
            dist[i] = config.epsilon / m
    s = math.fsum(dist.values())
    if s > 1.0:
        dist = {k: v / s for k, v in dist.items()}
        s = 1.0
    dist[0] = max(0.0, 1.0 - s)
    return dist


def step_upr(state: NetworkState, profile: Optional[PrivateBeliefProfile], config: NetworkConfig,
             rng: Optional[np.random.Generator] = None, q_compare: QCompare = None,
             finite_users: Optional[int] = None) -> MechanismStepOutput:
    """One UPR slot. Slot 0 has no flow history and runs a sharing step."""
    if state.flows_prev is None:
        eq = sharing_flow_general(config, state.x, q_compare)
        return MechanismStepOutput(eq.flows, "beliefs (bootstrap)")
    prev = state.flows_prev
    f = upr_target_flows(config, state.x, prev, q_compare)
    signals = []
    for cls in range(config.N + 1):
        if prev[cls] <= 0.0:
            continue
        age = 1 if cls > 0 else 2
        for target, p in sorted(upr_signal_distribution(config, state.x, prev, cls).items()):
            signals.append(RecommendationSignal(target, (cls, age), p))
    if finite_users:
        if rng is None:
            raise ContractViolation("finite-user mode needs an rng")
        m = config.arrival_mass
        counts = rng.multinomial(finite_users, np.clip(np.asarray(f) / m, 0.0, None) / (sum(f) / m))
        f = tuple(float(c) * m / finite_users for c in counts)
    return MechanismStepOutput(FlowAllocation(f, config.arrival_mass), "previous flows + signals",
                               tuple(signals))


def _iir_tolerance(config: NetworkConfig) -> float:
    scale = config.c0 + max(config.slopes()) * config.arrival_mass
    return 1e-9 + math.sqrt(config.epsilon) * scale


def iir_check(state: NetworkState, config: NetworkConfig, continuation: Optional[Callable] = None,
              tol: Optional[float] = None, q_compare: QCompare = None) -> Dict[int, bool]:
    """Per-class verdict: is obeying every possible signal a best response?

    A class is the set of users that travelled path j at t-1. Each such user
    knows path j's current belief exactly and, on every other path, only the
    prior Pr(bad) = x_i(t-1). For each signal it forms the joint posterior
    over which paths are good, and compares the expected cost of the
    recommended path (congestion from everybody else obeying) with every
    alternative. ``continuation(j_next, x)`` may add a cost-to-go for the
    class the user would belong to next; by default continuations are taken
    equal, since a single non-atomic user cannot move the public beliefs.

    The check is epsilon-approximate: at finite epsilon a recommended user
    keeps an O(epsilon) doubt, so a slack ``tol`` (default
    sqrt(eps) * (c_0 + k m)) is allowed.
    """
    if state.flows_prev is None or state.x_prev is None:
        raise ContractViolation("obedience is defined once a flow history exists")
    if tol is None:
        tol = _iir_tolerance(config)
    N = config.N
    prev = state.flows_prev
    paths = config.stochastic_paths
    good_now = set(good_paths(config, state.x))
    hyp_cache = {}

    def hypothesis(bad: tuple):
        if bad not in hyp_cache:
            x = tuple(p.q_HH if b else p.q_LH for p, b in zip(paths, bad))
            f = upr_target_flows(config, x, prev, q_compare)
            costs = [a + p.congestion * fp for a, p, fp in zip(config.expected_costs(x), config.paths, f)]
            hyp_cache[bad] = (x, f, costs)
        return hyp_cache[bad]

    verdicts = {}
    for cls in range(N + 1):
        if prev[cls] <= 0.0:
            continue
        if cls in good_now:
            verdicts[cls] = True  # told to keep doing what it would do anyway
            continue
        weights = {}
        for bad in itertools.product((False, True), repeat=N):
            w = 1.0
            for i, b in enumerate(bad, start=1):
                if i == cls:
                    w *= 1.0 if b == (i not in good_now) else 0.0
                else:
                    xp = state.x_prev[i - 1]
                    w *= xp if b else 1.0 - xp
            if w > 0.0:
                weights[bad] = w
        ok = True
        signal_mass = {}
        for bad, w in weights.items():
            x, _, _ = hypothesis(bad)
            for target, p in upr_signal_distribution(config, x, prev, cls).items():
                signal_mass.setdefault(target, {})[bad] = w * p
        for target, joint in signal_mass.items():
            z = math.fsum(joint.values())
            if z <= 0.0:
                continue
            expected = [0.0] * (N + 1)
            for bad, w in joint.items():
                x, _, costs = hypothesis(bad)
                for p in range(N + 1):
                    extra = continuation(p, x) if continuation is not None else 0.0
                    expected[p] += w / z * (costs[p] + extra)
            if expected[target] > min(expected) + tol:
                ok = False
                break
        verdicts[cls] = ok
    return verdicts


# --------------------------------------------------------------------------
# Mechanism objects used by the simulator
# --------------------------------------------------------------------------

class Mechanism:
    kind: MechanismKind
    name: str = ""

    def start(self, config: NetworkConfig, x0: Sequence[float], rng=None) -> "MechanismRun":
        raise NotImplementedError


class MechanismRun:
    def step(self, state: NetworkState) -> MechanismStepOutput:
        raise NotImplementedError

    def after(self, state: NetworkState, output: MechanismStepOutput, x_next: tuple) -> None:
        pass


class _BeliefOnlyRun(MechanismRun):
    """Flows depend on the public belief only, so they are memoized."""

    def __init__(self, fn, cache):
        self._fn = fn
        self._cache = cache

    def step(self, state):
        out = self._cache.get(state.x)
        if out is None:
            out = self._cache[state.x] = self._fn(state)
        return out


@dataclass
class Sharing(Mechanism):
    q_compare: QCompare = None
    kind: MechanismKind = MechanismKind.SHARING
    name: str = "sharing"
    _cache: dict = field(default_factory=dict, repr=False)

    def start(self, config, x0, rng=None):
        cache = self._cache.setdefault(config, {})
        return _BeliefOnlyRun(lambda s: step_sharing(s, config, self.q_compare), cache)


@dataclass
class SocialOptimum(Mechanism):
    kind: MechanismKind = MechanismKind.SOCIAL_OPTIMUM
    name: str = "optimum"
    _cache: dict = field(default_factory=dict, repr=False)

    def start(self, config, x0, rng=None):
        cache = self._cache.setdefault(config, {})
        return _BeliefOnlyRun(lambda s: step_social_optimum(s, config), cache)


class _HidingRun(MechanismRun):
    def __init__(self, config, x0, q_compare, recommend, deterministic, cache):
        self.config = config
        self.profile = PrivateBeliefProfile.initial(x0)
        self.q_compare = q_compare
        self.recommend = recommend
        self.deterministic = deterministic
        self._cache = cache

    def step(self, state):
        p = self.profile
        key = (state.x, p.y2, p.flows_prev)
        out = self._cache.get(key)
        if out is None:
            if self.deterministic:
                out = step_deterministic_recommendation(state, p, self.config, self.q_compare, self.recommend)
            else:
                out = step_hiding(state, p, self.config, self.q_compare)
            self._cache[key] = out
        return out

    def after(self, state, output, x_next):
        p = self.profile
        # The update ignores the slot counter, so memoize on everything else.
        key = ("advance", state.x, p.y2, p.xhat_prev, p.flows_prev, output.flows.f)
        hit = self._cache.get(key)
        if hit is None:
            nxt = p.advance(self.config, state.x, output.flows.f, output.predictions)
            hit = self._cache[key] = (nxt.y2, nxt.xhat_prev)
        self.profile = PrivateBeliefProfile(p.t + 1, hit[0], hit[1], output.flows.f, p.flows_prev)


@dataclass
class Hiding(Mechanism):
    q_compare: QCompare = None
    kind: MechanismKind = MechanismKind.HIDING
    name: str = "hiding"
    _cache: dict = field(default_factory=dict, repr=False)

    def start(self, config, x0, rng=None):
        return _HidingRun(config, x0, self.q_compare, False, False, self._cache.setdefault(config, {}))


@dataclass
class DeterministicRecommendation(Mechanism):
    q_compare: QCompare = None
    recommend: bool = True
    kind: MechanismKind = MechanismKind.DETERMINISTIC_RECOMMENDATION
    name: str = "deterministic"
    _cache: dict = field(default_factory=dict, repr=False)

    def start(self, config, x0, rng=None):
        return _HidingRun(config, x0, self.q_compare, self.recommend, True,
                          self._cache.setdefault((config, self.recommend), {}))


class _UPRRun(MechanismRun):
    def __init__(self, config, q_compare, rng, finite_users, cache):
        self.config = config
        self.q_compare = q_compare
        self.rng = rng
        self.finite_users = finite_users
        self._cache = cache

    def step(self, state):
        if self.finite_users:
            return step_upr(state, None, self.config, self.rng, self.q_compare, self.finite_users)
        key = (state.x, state.flows_prev)
        out = self._cache.get(key)
        if out is None:
            out = self._cache[key] = step_upr(state, None, self.config, None, self.q_compare)
        return out


@dataclass
class UPR(Mechanism):
    q_compare: QCompare = None
    finite_users: Optional[int] = None
    kind: MechanismKind = MechanismKind.UPR
    name: str = "upr"
    _cache: dict = field(default_factory=dict, repr=False)

    def start(self, config, x0, rng=None):
        return _UPRRun(config, self.q_compare, rng, self.finite_users, self._cache.setdefault(config, {}))


MECHANISMS = {
    "sharing": Sharing,
    "hiding": Hiding,
    "deterministic": DeterministicRecommendation,
    "upr": UPR,
    "optimum": SocialOptimum,
}


def make_mechanism(name: str, **kwargs) -> Mechanism:
    try:
        return MECHANISMS[name](**kwargs)
    except KeyError:
        raise ContractViolation(f"unknown mechanism {name!r}; choose from {sorted(MECHANISMS)}") from None
