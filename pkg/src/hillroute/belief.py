"""Hazard-belief dynamics.

Public beliefs are what the platform learns from travellers' reports. Private
beliefs belong to users when the platform hides its beliefs: a user who just
travelled a path knows the public belief there (age 1); everyone else works
from a one-step-stale estimate rectified from observed flows (age 2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .core import MASS_TOL, NetworkConfig, PathModel

HIGH = "H"
LOW = "L"


def _is_high(observed) -> Optional[bool]:
    if observed is None:
        return None
    if isinstance(observed, str):
        if observed.upper() in ("H", "C_H", "HIGH"):
            return True
        if observed.upper() in ("L", "C_L", "LOW"):
            return False
        raise ValueError(f"unrecognised cost state {observed!r}")
    return bool(observed)


def observe_and_posterior(x_prior: float, observed=None) -> float:
    """Posterior hazard belief after (maybe) seeing the path's current state.

    ``observed`` is ``None`` when nobody travelled the path, otherwise the
    realized state ("H"/"L", or a bool meaning high).
    """
    high = _is_high(observed)
    if high is None:
        return x_prior
    return 1.0 if high else 0.0


def advance_public_belief(x_post: float, path: PathModel) -> float:
    """One Markov step of the hazard belief: x q_HH + (1 - x) q_LH."""
    return x_post * path.q_HH + (1.0 - x_post) * path.q_LH


def private_belief_age2(x_prev_inferred: float, path: PathModel) -> float:
    """Age-2 belief for time t from the inferred public belief at t-1."""
    return x_prev_inferred * path.q_HH + (1.0 - x_prev_inferred) * path.q_LH


def rectify_from_flows(f_prev: float, f_prev2: float, path: PathModel) -> float:
    """Infer x(t-1) from whether the path's flow held up between t-2 and t-1."""
    if f_prev >= f_prev2 - MASS_TOL:
        return path.q_LH
    return path.q_HH


def advance_information_age(chose_path_i: bool) -> int:
    return 1 if chose_path_i else 2


def update_public_beliefs(config: NetworkConfig, x: Sequence[float], flows: Sequence[float],
                          high: Sequence[bool]) -> tuple:
    """Observe every path carrying at least epsilon/2 flow, then advance.

    ``flows`` is the full N+1 vector; ``high`` the realized states at t.
    Returns x(t+1).
    """
    threshold = 0.5 * config.epsilon
    out = []
    for i, path in enumerate(config.stochastic_paths):
        seen = high[i] if flows[i + 1] >= threshold else None
        out.append(advance_public_belief(observe_and_posterior(x[i], seen), path))
    return tuple(out)


@dataclass(frozen=True)
class PrivateBeliefProfile:
    """What hidden-information users know at the start of slot t.

    Users are grouped by the path they travelled at t-1: that class has age 1
    on its own path (belief equal to the public one) and age 2 elsewhere.
    ``y2`` holds the age-2 beliefs, ``xhat_prev`` the users' estimate of the
    public belief at t-1, and ``flows_prev`` / ``flows_prev2`` the disclosed
    flow vectors of the last two slots (``None`` before they exist).
    """

    t: int
    y2: tuple
    xhat_prev: tuple
    flows_prev: Optional[tuple] = None
    flows_prev2: Optional[tuple] = None

    @classmethod
    def initial(cls, x0: Sequence[float]) -> "PrivateBeliefProfile":
        # At t=0 everyone holds the common prior and nobody has travelled yet.
        x0 = tuple(float(v) for v in x0)
        return cls(t=0, y2=x0, xhat_prev=x0)

    def ages(self, N: int) -> list:
        """ages[j][i]: information age on stochastic path i+1 of the class that used path j."""
        return [[advance_information_age(self.flows_prev is not None and j == i + 1)
                 for i in range(N)] for j in range(N + 1)]

    def age1_beliefs(self, x: Sequence[float]) -> tuple:
        return tuple(x)

    def advance(self, config: NetworkConfig, x_now: Sequence[float], flows_now: Sequence[float],
                predictions: Optional[Sequence[tuple]] = None) -> "PrivateBeliefProfile":
        """Profile for slot t+1 after flows f(t) have been disclosed.

        The users' estimate of x(t) comes from f(t): if the path carried no
        observable flow at t-1 nothing was learnt and the estimate just
        advances. Otherwise, when ``predictions[i] = (flow if x_i(t)=q_LH,
        flow if x_i(t)=q_HH)`` is supplied, the hypothesis that reproduces
        f_i(t) wins; without predictions the literal comparison
        f(t) >= f(t-1) decides.
        """
        flows_now = tuple(flows_now)
        threshold = 0.5 * config.epsilon
        xhat = []
        for i, path in enumerate(config.stochastic_paths):
            if self.flows_prev is None:
                # x(0) was announced to everybody.
                xhat.append(self.xhat_prev[i])
                continue
            if self.flows_prev[i + 1] < threshold:
                xhat.append(advance_public_belief(self.xhat_prev[i], path))
                continue
            if predictions is not None and predictions[i] is not None:
                f_low, f_high = predictions[i]
                f_obs = flows_now[i + 1]
                gap_low, gap_high = abs(f_obs - f_low), abs(f_obs - f_high)
                if abs(f_low - f_high) <= MASS_TOL:
                    xhat.append(advance_public_belief(self.xhat_prev[i], path))
                elif gap_low <= gap_high:
                    xhat.append(path.q_LH)
                else:
                    xhat.append(path.q_HH)
                continue
            xhat.append(rectify_from_flows(flows_now[i + 1], self.flows_prev[i + 1], path))
        y2 = tuple(private_belief_age2(v, p) for v, p in zip(xhat, config.stochastic_paths))
        return PrivateBeliefProfile(t=self.t + 1, y2=y2, xhat_prev=tuple(xhat),
                                    flows_prev=flows_now, flows_prev2=self.flows_prev)
