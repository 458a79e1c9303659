"""Shared generators and independent oracles for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from hillroute.core import NetworkConfig, PathModel

ACCEPTANCE_RESULTS = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def random_path(rng, congestion_range=(1.0, 1.0)) -> PathModel:
    q_LH = rng.uniform(0.01, 0.49)
    q_HH = rng.uniform(0.51, 0.99)
    c_L = rng.uniform(0.0, 5.0)
    c_H = c_L + rng.uniform(0.0, 10.0)
    return PathModel.stochastic(c_L, c_H, q_LH, q_HH, rng.uniform(*congestion_range))


def random_config(rng, N=None, congestion_range=(1.0, 1.0), mass=1.0) -> NetworkConfig:
    if N is None:
        N = int(rng.integers(1, 4))
    paths = [random_path(rng, congestion_range) for _ in range(N)]
    det = PathModel.deterministic(rng.uniform(0.0, 8.0), rng.uniform(*congestion_range))
    return NetworkConfig(det, paths, rng.uniform(0.1, 0.99), rng.uniform(1e-4, 0.05), mass)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_path():
    """c0 = 3, one path with c_L = 0, c_H = 10, q_LH = 0.2, q_HH = 0.8."""
    return NetworkConfig(PathModel.deterministic(3.0), [PathModel.stochastic(0.0, 10.0, 0.2, 0.8)], 0.9, 0.01)


def max_deviation_gain(config, x, flows, delta=1e-4) -> float:
    """Largest cost saving a mover gets by shifting ``delta`` from a used path to another."""
    a = config.expected_costs(x)
    k = config.slopes()
    n = len(flows)
    best = -math.inf
    for i in range(n):
        if flows[i] <= config.epsilon + 1e-12:
            continue
        here = a[i] + k[i] * flows[i]
        for j in range(n):
            if j != i:
                best = max(best, here - (a[j] + k[j] * (flows[j] + delta)))
    return best


def grid_minimum_cost(config, x, resolution=1e-3) -> float:
    """Exact minimum of the slot cost over all simplex grid points (step resolution * mass).

    The cost is separable, so the minimum over the full grid is found by a
    min-plus convolution over paths instead of enumerating every point.
    """
    m = config.arrival_mass
    K = int(round(1.0 / resolution))
    units = np.arange(K + 1) * m / K
    a = config.expected_costs(x)
    k = config.slopes()
    best = None
    for p in range(config.N + 1):
        h = units * (a[p] + k[p] * units)
        if p > 0:
            h = np.where(units >= config.epsilon - 1e-15, h, np.inf)
        if best is None:
            best = h
        else:
            # new[s] = min_u best[s-u] + h[u]
            idx = np.arange(K + 1)
            s_minus_u = idx[:, None] - idx[None, :]
            valid = s_minus_u >= 0
            M = np.where(valid, best[np.clip(s_minus_u, 0, K)] + h[None, :], np.inf)
            best = M.min(axis=1)
    return float(best[K])


def exact_belief_policy_cost(config, flow_fn, x0: float, tail=1e-13) -> float:
    """Exact discounted cost of a belief-driven policy on a one-path network.

    Between observations the belief follows a deterministic drift chain, so
    the cost from any belief is affine in the (unknown) values at q_LH and
    q_HH; solving the resulting 2x2 system gives those values exactly.
    ``flow_fn(z)`` returns the flow tuple used at belief ``z``.
    """
    p = config.stochastic_paths[0]
    rho = config.rho
    threshold = 0.5 * config.epsilon
    horizon = int(math.ceil(math.log(tail) / math.log(rho)))

    def chain(z):
        zs = [z]
        for _ in range(horizon):
            zs.append(zs[-1] * p.q_HH + (1.0 - zs[-1]) * p.q_LH)
        return zs

    def affine(zs):
        c = lo = hi = 0.0
        for z in reversed(zs):
            f = flow_fn(z)
            a = config.expected_costs((z,))
            k = config.slopes()
            cost = sum(fp * (ap + kp * fp) for fp, ap, kp in zip(f, a, k))
            if f[1] >= threshold:
                c, lo, hi = cost, rho * (1.0 - z), rho * z
            else:
                c, lo, hi = cost + rho * c, rho * lo, rho * hi
        return c, lo, hi

    cL, lL, hL = affine(chain(p.q_LH))
    cH, lH, hH = affine(chain(p.q_HH))
    vl, vh = np.linalg.solve([[1.0 - lL, -hL], [-lH, 1.0 - hH]], [cL, cH])
    c, lo, hi = affine(chain(x0))
    return c + lo * vl + hi * vh
