"""Episode engine for the parallel network.

Per slot: the mechanism sets flows from the current beliefs, every path
carrying at least epsilon/2 flow reveals its current state, the slot's
expected social cost is booked, the true cost chains move on, and beliefs
advance. Costs are expected costs under the platform's Bayes-correct belief.

Randomness comes from ``SeedSequence([seed, episode, stream])`` so the true
cost chains are the same for every mechanism run with the same seed.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import IO, List, Optional, Sequence

import numpy as np

from .core import ContractViolation, NetworkConfig
from .mechanisms import Mechanism, NetworkState

STREAM_INITIAL = 0
STREAM_CHAIN = 1
STREAM_MECHANISM = 2
STREAM_STRATA = 3

TRACE_FIELDS = ("t", "path", "true_state", "x_i", "flow", "cost_contrib", "signal")


def episode_rng(seed: int, episode: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, episode, stream])))


@dataclass(frozen=True)
class StepRecord:
    t: int
    high: tuple
    x: tuple
    flows: tuple
    cost: float
    signals: tuple = ()


@dataclass
class EpisodeTrace:
    steps: List[StepRecord]
    total: float
    seed: int
    episode: int
    horizon: int
    rho: float
    discounted: bool = True

    def replay_total(self) -> float:
        """Recompute the accumulated cost from the stored per-slot costs."""
        total, disc = 0.0, 1.0
        for s in self.steps:
            total += disc * s.cost
            if self.discounted:
                disc *= self.rho
        return total

    def write_ndjson(self, fh: IO[str], config: NetworkConfig, extra: Optional[dict] = None) -> None:
        """One record per (slot, path); ``extra`` fields first, then TRACE_FIELDS in order."""
        for s in self.steps:
            a = config.expected_costs(s.x)
            for p, path in enumerate(config.paths):
                fp = s.flows[p]
                sig = [[g.issued_to[0], g.issued_to[1], g.probability] for g in s.signals if g.target == p]
                rec = dict(extra or {})
                rec.update({
                    "t": s.t,
                    "path": p,
                    "true_state": None if p == 0 else ("H" if s.high[p - 1] else "L"),
                    "x_i": None if p == 0 else s.x[p - 1],
                    "flow": fp,
                    "cost_contrib": fp * (a[p] + path.congestion * fp),
                    "signal": sig,
                })
                fh.write(json.dumps(rec) + "\n")


def run_episode(config: NetworkConfig, mechanism: Mechanism, x0: Sequence[float], T: Optional[int] = None,
                seed: int = 0, episode: int = 0, record: bool = True, discounted: bool = True,
                initial_high: Optional[Sequence[bool]] = None) -> EpisodeTrace:
    """Simulate one episode; the true initial states are drawn from x0 unless given."""
    from .mdp import auto_horizon

    if T is None:
        T = auto_horizon(config)
    if T < 1:
        raise ContractViolation("horizon must be >= 1")
    N = config.N
    x = tuple(float(v) for v in x0)
    if len(x) != N:
        raise ContractViolation(f"x0 has {len(x)} entries, need {N}")
    if initial_high is None:
        u0 = episode_rng(seed, episode, STREAM_INITIAL).random(N)
        high = [bool(u0[i] < x[i]) for i in range(N)]
    else:
        high = [bool(h) for h in initial_high]
    u_chain = episode_rng(seed, episode, STREAM_CHAIN).random((T, N)).tolist()
    run = mechanism.start(config, x, episode_rng(seed, episode, STREAM_MECHANISM))

    paths = config.stochastic_paths
    q_lh = [p.q_LH for p in paths]
    q_hh = [p.q_HH for p in paths]
    c_lo = [p.c_L for p in paths]
    c_hi = [p.c_H for p in paths]
    kappa = config.slopes()
    c0 = config.c0
    rho = config.rho
    threshold = 0.5 * config.epsilon
    steps = [] if record else None
    total, disc = 0.0, 1.0
    x_prev = flows_prev = None
    for t in range(T):
        state = NetworkState(t, x, x_prev, flows_prev)
        out = run.step(state)
        f = out.flows.f
        cost = f[0] * (c0 + kappa[0] * f[0])
        for i in range(N):
            fi = f[i + 1]
            cost += fi * (x[i] * c_hi[i] + (1.0 - x[i]) * c_lo[i] + kappa[i + 1] * fi)
        total += disc * cost
        if discounted:
            disc *= rho
        if record:
            steps.append(StepRecord(t, tuple(high), x, f, cost, out.signals))
        xn = []
        row = u_chain[t]
        for i in range(N):
            if f[i + 1] >= threshold:
                post = 1.0 if high[i] else 0.0
            else:
                post = x[i]
            xn.append(post * q_hh[i] + (1.0 - post) * q_lh[i])
            high[i] = row[i] < (q_hh[i] if high[i] else q_lh[i])
        xn = tuple(xn)
        run.after(state, out, xn)
        x_prev, flows_prev, x = x, f, xn
    return EpisodeTrace(steps or [], total, seed, episode, T, rho, discounted)


@dataclass(frozen=True)
class BatchSummary:
    mean: float
    stderr: float
    episodes: int
    horizon: int
    totals: tuple
    traces: Optional[tuple] = None


def stratified_initial_states(x0: Sequence[float], M: int, seed: int) -> List[tuple]:
    """True initial states for episodes 0..M-1 drawn by Latin-hypercube sampling.

    Episode e keeps its own initial uniform U_e but moves it into stratum
    pi(e) of width 1/M, pi a seeded shuffle: u_e = (pi(e) + U_e) / M. About
    x_i(0) * M episodes then start with path i high, the marginal law of each
    episode is unchanged, and a single episode reproduces ``run_episode``.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, M, STREAM_STRATA])))
    N = len(x0)
    own = np.array([episode_rng(seed, e, STREAM_INITIAL).random(N) for e in range(M)]).reshape(M, N)
    cols = []
    for i, xi in enumerate(x0):
        u = (rng.permutation(M) + own[:, i]) / M
        cols.append(u < xi)
    return [tuple(bool(c[e]) for c in cols) for e in range(M)]


def _episode_total(args):
    config, mechanism, x0, T, seed, ep, discounted, high = args
    return run_episode(config, mechanism, x0, T, seed, ep, record=False, discounted=discounted,
                       initial_high=high).total


def summarize(totals: Sequence[float], horizon: int, traces=None) -> BatchSummary:
    arr = np.asarray(totals, dtype=float)
    M = len(arr)
    stderr = float(arr.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    return BatchSummary(float(arr.mean()), stderr, M, horizon, tuple(float(v) for v in arr), traces)


def run_batch(config: NetworkConfig, mechanism: Mechanism, x0: Sequence[float], T: Optional[int] = None,
              M: int = 100, seed: int = 0, threads: int = 1, keep_traces: bool = False,
              discounted: bool = True, stratify: bool = True) -> BatchSummary:
    """Run episodes 0..M-1 and reduce them in episode order.

    With ``stratify`` the true initial states come from
    :func:`stratified_initial_states`; otherwise each episode draws its own.
    """
    from .mdp import auto_horizon

    if M < 1:
        raise ContractViolation("need at least one episode")
    if T is None:
        T = auto_horizon(config)
    highs = stratified_initial_states(x0, M, seed) if stratify else [None] * M
    if keep_traces or threads <= 1:
        traces = [run_episode(config, mechanism, x0, T, seed, ep, record=keep_traces, discounted=discounted,
                              initial_high=highs[ep])
                  for ep in range(M)]
        totals = [tr.total for tr in traces]
        return summarize(totals, T, tuple(traces) if keep_traces else None)
    jobs = [(config, mechanism, tuple(x0), T, seed, ep, discounted, highs[ep]) for ep in range(M)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        totals = list(pool.map(_episode_total, jobs, chunksize=max(1, M // (4 * threads))))
    return summarize(totals, T)
