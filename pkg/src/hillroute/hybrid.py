"""Two-origin network with shared congested edges.

Each origin chooses between a path through stochastic roads and an
alternative path. Paths from different origins overlap on shared edges, so
an origin's best split depends on the other's. Edge latency is
``E[c_e | x_e] + k_e * load_e / capacity_e`` and a path costs the sum over its
edges.

Four mechanisms run on matched seeds:

* ``optimum``: minimizes the slot's social cost with at least epsilon on every
  stochastic path, so every stochastic road is observed each slot.
* ``upr``: selfish split under the public belief, but a stochastic path that
  is not believed good on all of its roads keeps at least epsilon travellers.
* ``sharing``: selfish split under the public belief.
* ``hiding``: users who travelled a path last slot know its roads' fresh
  states; everyone else acts on the belief from the previous slot advanced
  one step.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BOUNDARY_TOL, ContractViolation, PathModel
from .datafit import load_fixture
from .mdp import NonConvergence

BR_TOL = 1e-8
BR_MAX_ITER = 10_000
HYBRID_MECHANISMS = ("optimum", "upr", "sharing", "hiding")

STREAM_INITIAL = 0
STREAM_CHAIN = 1
STREAM_ARRIVALS = 4


@dataclass(frozen=True)
class Edge:
    name: str
    model: PathModel
    congestion: float = 1.0
    capacity: float = 1.0

    @property
    def stochastic(self) -> bool:
        return self.model.is_stochastic


@dataclass(frozen=True)
class Origin:
    name: str
    alpha: float
    risky: str           # path through stochastic roads
    alternative: str


@dataclass(frozen=True)
class HybridNetwork:
    edges: Tuple[Edge, ...]
    paths: Tuple[Tuple[str, Tuple[str, ...]], ...]
    origins: Tuple[Origin, ...]
    x0: Tuple[float, ...]          # one belief per stochastic edge, in edge order
    rho: float = 0.95
    epsilon: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        names = [e.name for e in self.edges]
        if len(set(names)) != len(names):
            raise ContractViolation("duplicate edge names")
        path_names = [p for p, _ in self.paths]
        for p, members in self.paths:
            if not members:
                raise ContractViolation(f"path {p} has no edges")
            for e in members:
                if e not in names:
                    raise ContractViolation(f"path {p} uses unknown edge {e}")
        for o in self.origins:
            if not o.alpha > 0:
                raise ContractViolation(f"arrival rate at {o.name} must be positive")
            if o.risky not in path_names or o.alternative not in path_names:
                raise ContractViolation(f"origin {o.name} references an unknown path")
        if len(self.x0) != len(self.stochastic_edges):
            raise ContractViolation("need one initial belief per stochastic edge")
        if not 0.0 < self.rho < 1.0:
            raise ContractViolation("rho must lie in (0, 1)")

    @property
    def path_names(self) -> Tuple[str, ...]:
        return tuple(p for p, _ in self.paths)

    @property
    def stochastic_edges(self) -> Tuple[int, ...]:
        return tuple(j for j, e in enumerate(self.edges) if e.stochastic)

    @property
    def incidence(self) -> np.ndarray:
        """Edge-by-path 0/1 membership matrix."""
        index = {e.name: j for j, e in enumerate(self.edges)}
        A = np.zeros((len(self.edges), len(self.paths)))
        for k, (_, members) in enumerate(self.paths):
            for e in members:
                A[index[e], k] = 1.0
        return A

    def shared_edges(self) -> Tuple[str, ...]:
        counts = self.incidence.sum(axis=1)
        return tuple(e.name for e, c in zip(self.edges, counts) if c >= 2)

    def path_index(self, name: str) -> int:
        return self.path_names.index(name)

    def alphas(self) -> np.ndarray:
        return np.array([o.alpha for o in self.origins])

    def without_noise(self) -> "HybridNetwork":
        return replace(self, sigma=0.0)


def _edge_arrays(net: HybridNetwork, x: Sequence[float]):
    """(expected edge cost, congestion slope per unit load) as arrays."""
    a = np.empty(len(net.edges))
    k = np.empty(len(net.edges))
    xi = iter(x)
    for j, e in enumerate(net.edges):
        m = e.model
        a[j] = m.expected_cost(next(xi)) if e.stochastic else m.c_fixed
        k[j] = e.congestion / e.capacity
    return a, k


def edge_loads(net: HybridNetwork, flows: Sequence[float]) -> np.ndarray:
    return net.incidence @ np.asarray(flows, dtype=float)


def hybrid_path_cost(net: HybridNetwork, path: str, flows: Sequence[float], x: Sequence[float]) -> float:
    """Sum over the path's edges of expected cost plus congestion from all origins."""
    a, k = _edge_arrays(net, x)
    lat = a + k * edge_loads(net, flows)
    return float(net.incidence[:, net.path_index(path)] @ lat)


def hybrid_social_cost(net: HybridNetwork, flows: Sequence[float], x: Sequence[float]) -> float:
    a, k = _edge_arrays(net, x)
    load = edge_loads(net, flows)
    return float(load @ (a + k * load))


def _best_response(net: HybridNetwork, x, alphas, lower, marginal: bool, start=None) -> np.ndarray:
    """Gauss-Seidel over origins; each origin equalizes its two path (marginal) costs.

    ``marginal`` doubles the congestion slope, which turns the selfish
    fixed point into the minimizer of the social cost.
    """
    A = net.incidence
    a, k = _edge_arrays(net, x)
    mult = 2.0 if marginal else 1.0
    P = len(net.paths)
    f = np.zeros(P)
    pairs = []
    for o, alpha in zip(net.origins, alphas):
        r, d = net.path_index(o.risky), net.path_index(o.alternative)
        lo = min(lower[r], alpha)
        diff = A[:, r] - A[:, d]
        slope = mult * float(diff ** 2 @ k)
        if slope <= 0.0:
            raise ContractViolation(f"paths of {o.name} share every congested edge")
        pairs.append((r, d, alpha, lo, diff, slope))
        f[r] = lo if start is None else min(max(start[r], lo), alpha)
        f[d] = alpha - f[r]
    for _ in range(BR_MAX_ITER):
        moved = 0.0
        for r, d, alpha, lo, diff, slope in pairs:
            lat = a + mult * k * (A @ f)
            gap = float(diff @ lat)          # cost(risky) - cost(alternative)
            new = min(max(f[r] - gap / slope, lo), alpha)
            moved = max(moved, abs(new - f[r]))
            f[r], f[d] = new, alpha - new
        if moved < BR_TOL:
            return f
    raise NonConvergence(f"best response did not settle in {BR_MAX_ITER} rounds")


def hybrid_equilibrium(net: HybridNetwork, x: Sequence[float], alphas=None, lower=None) -> np.ndarray:
    """Selfish path flows for both origins under beliefs ``x``."""
    alphas = net.alphas() if alphas is None else np.asarray(alphas, dtype=float)
    lower = np.zeros(len(net.paths)) if lower is None else lower
    return _best_response(net, x, alphas, lower, marginal=False)


def hybrid_optimum(net: HybridNetwork, x: Sequence[float], alphas=None) -> np.ndarray:
    """Slot-optimal flows with every risky path carrying at least epsilon."""
    alphas = net.alphas() if alphas is None else np.asarray(alphas, dtype=float)
    lower = np.zeros(len(net.paths))
    for o in net.origins:
        lower[net.path_index(o.risky)] = net.epsilon
    return _best_response(net, x, alphas, lower, marginal=True)


def _stochastic_members(net: HybridNetwork, path: str) -> List[int]:
    """Positions (in belief order) of the stochastic edges on ``path``."""
    members = dict(net.paths)[path]
    order = {net.edges[j].name: pos for pos, j in enumerate(net.stochastic_edges)}
    return [order[e] for e in members if e in order]


def composite_is_good(net: HybridNetwork, path: str, x: Sequence[float]) -> bool:
    """A composite path is good when every stochastic road on it is believed good."""
    sto = [net.edges[j] for j in net.stochastic_edges]
    return all(x[p] <= sto[p].model.q_LH + BOUNDARY_TOL for p in _stochastic_members(net, path))


def advance_beliefs(net: HybridNetwork, x: Sequence[float], observed: Optional[Sequence[Optional[bool]]] = None) -> tuple:
    """One slot of belief dynamics; ``observed[p]`` is the seen state or None."""
    out = []
    for p, j in enumerate(net.stochastic_edges):
        m = net.edges[j].model
        v = x[p]
        if observed is not None and observed[p] is not None:
            v = 1.0 if observed[p] else 0.0
        out.append(v * m.q_HH + (1.0 - v) * m.q_LH)
    return tuple(out)


@dataclass
class _HybridState:
    x: tuple
    x_prev: Optional[tuple] = None
    shares_prev: Optional[np.ndarray] = None   # fraction of each origin on each path last slot


def _upr_flows(net: HybridNetwork, st: _HybridState, alphas) -> np.ndarray:
    f = hybrid_equilibrium(net, st.x, alphas)
    lower = np.zeros(len(net.paths))
    for o in net.origins:
        r = net.path_index(o.risky)
        if f[r] < net.epsilon and not composite_is_good(net, o.risky, st.x):
            lower[r] = net.epsilon
    if lower.any():
        f = hybrid_equilibrium(net, st.x, alphas, lower)
    return f


def _hiding_flows(net: HybridNetwork, st: _HybridState, alphas) -> np.ndarray:
    if st.x_prev is None:
        return hybrid_equilibrium(net, st.x, alphas)
    stale = advance_beliefs(net, st.x_prev)
    f_stale = hybrid_equilibrium(net, stale, alphas)
    f = f_stale.copy()
    for oi, o in enumerate(net.origins):
        r, d = net.path_index(o.risky), net.path_index(o.alternative)
        alpha = alphas[oi]
        fresh = list(stale)
        for p in _stochastic_members(net, o.risky):
            fresh[p] = st.x[p]
        f_fresh = hybrid_equilibrium(net, fresh, alphas)
        prev = st.shares_prev[r] * alpha
        stale_part = (alpha - prev) * f_stale[r] / alpha
        fresh_part = min(max(f_fresh[r] - stale_part, 0.0), prev)
        f[r] = stale_part + fresh_part
        f[d] = alpha - f[r]
    return f


_FLOW_RULES = {
    "optimum": lambda net, st, al: hybrid_optimum(net, st.x, al),
    "upr": _upr_flows,
    "sharing": lambda net, st, al: hybrid_equilibrium(net, st.x, al),
    "hiding": _hiding_flows,
}


def _rng(seed, episode, stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, episode, stream])))


def run_hybrid_episode(net: HybridNetwork, mechanism: str, T: int = 30, seed: int = 0, episode: int = 0,
                       discounted: bool = True, record: bool = False):
    """Discounted social cost of one episode; with ``record`` also per-slot rows."""
    if mechanism not in _FLOW_RULES:
        raise ContractViolation(f"unknown hybrid mechanism {mechanism!r}")
    rule = _FLOW_RULES[mechanism]
    sto = [net.edges[j] for j in net.stochastic_edges]
    stoch_rows = list(net.stochastic_edges)
    high = (_rng(seed, episode, STREAM_INITIAL).random(len(sto)) < np.asarray(net.x0)).tolist()
    u_chain = _rng(seed, episode, STREAM_CHAIN).random((T, len(sto)))
    base = net.alphas()
    noise = _rng(seed, episode, STREAM_ARRIVALS).standard_normal((T, len(base)))
    st = _HybridState(tuple(net.x0))
    total, disc = 0.0, 1.0
    rows = []
    threshold = 0.5 * net.epsilon
    for t in range(T):
        alphas = np.maximum(base + net.sigma * noise[t], net.epsilon * 2)
        f = rule(net, st, alphas)
        cost = hybrid_social_cost(net, f, st.x)
        total += disc * cost
        if discounted:
            disc *= net.rho
        if record:
            rows.append((t, tuple(high), st.x, tuple(f.tolist()), cost))
        load = edge_loads(net, f)
        seen = [high[p] if load[j] >= threshold else None for p, j in enumerate(stoch_rows)]
        x_next = advance_beliefs(net, st.x, seen)
        for p, e in enumerate(sto):
            high[p] = bool(u_chain[t, p] < (e.model.q_HH if high[p] else e.model.q_LH))
        shares = np.zeros(len(net.paths))
        for oi, o in enumerate(net.origins):
            for name in (o.risky, o.alternative):
                k = net.path_index(name)
                shares[k] = f[k] / alphas[oi]
        st = _HybridState(x_next, st.x, shares)
    return (total, rows) if record else total


@dataclass(frozen=True)
class HybridResult:
    mechanisms: Tuple[str, ...]
    totals: Dict[str, np.ndarray] = field(compare=False)
    T: int = 30
    seed: int = 0

    def mean(self, mech: str) -> float:
        return float(self.totals[mech].mean())

    def stderr(self, mech: str) -> float:
        v = self.totals[mech]
        return float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0

    def ratio(self, mech: str) -> float:
        return self.mean(mech) / self.mean("optimum") if "optimum" in self.totals else float("nan")

    def ordering_count(self, order: Sequence[str] = HYBRID_MECHANISMS, tol: float = 1e-9) -> int:
        """Episodes whose costs are nondecreasing along ``order``."""
        stack = np.vstack([self.totals[m] for m in order])
        ok = np.all(np.diff(stack, axis=0) >= -tol * np.abs(stack[1:]), axis=0)
        return int(ok.sum())

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mechanism", "mean_cost", "stderr", "ratio_to_optimum", "episodes", "horizon", "seed"])
        for m in self.mechanisms:
            w.writerow([m, repr(self.mean(m)), repr(self.stderr(m)), repr(self.ratio(m)),
                        len(self.totals[m]), self.T, self.seed])


def _episode_job(args):
    net, mech, T, seed, ep, discounted = args
    return run_hybrid_episode(net, mech, T, seed, ep, discounted)


def run_hybrid_experiment(net: HybridNetwork, mechanisms: Sequence[str] = HYBRID_MECHANISMS, T: int = 30,
                          M: int = 100, seed: int = 0, discounted: bool = True, threads: int = 1) -> HybridResult:
    mechanisms = tuple(mechanisms)
    for m in mechanisms:
        if m not in _FLOW_RULES:
            raise ContractViolation(f"unknown hybrid mechanism {m!r}")
    jobs = [(net, m, T, seed, ep, discounted) for m in mechanisms for ep in range(M)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_episode_job, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        out = [_episode_job(j) for j in jobs]
    totals = {m: np.asarray(out[i * M:(i + 1) * M]) for i, m in enumerate(mechanisms)}
    return HybridResult(mechanisms, totals, T, seed)


# Travel-time calibration (minutes per 5-minute slot). The published study
# does not give its speed-band to latency mapping, so these are free knobs.
DEFAULT_CALIBRATION = {
    "N_CD": {"c_L": 2.9, "c_H": 29.9},
    "YA_E": {"c_L": 5.5, "c_H": 43.9},
    "E_YA": {"c_L": 5.1, "c_H": 15.4},
    "NS_E": {"c_L": 4.6, "c_H": 26.3},
    "HAINING": 7.9,
    "HENAN": 10.2,
    "S_ZHONGSHAN": 15.0,
    "E_ZHONGSHAN2": 16.0,
    "congestion": 12.6,
}


def build_shanghai_fixture(calibration: Optional[dict] = None, capacity: Optional[float] = None) -> HybridNetwork:
    """Two-origin network around the shared elevated corridor."""
    fx = load_fixture()
    cal = dict(DEFAULT_CALIBRATION)
    if calibration:
        cal.update(calibration)
    arr = fx["arrivals"]
    cap = arr["alpha1"] + arr["alpha2"] if capacity is None else capacity
    k = cal["congestion"]
    edges = []
    for name in ("N_CD", "YA_E", "E_YA", "NS_E"):
        P = fx["normalized"][name]
        c = cal[name]
        edges.append(Edge(name, PathModel.stochastic(c["c_L"], c["c_H"], P[0, 1], P[1, 1]), k, cap))
    for name in ("HAINING", "HENAN", "S_ZHONGSHAN", "E_ZHONGSHAN2"):
        edges.append(Edge(name, PathModel.deterministic(cal[name]), k, cap))
    paths = (
        ("1-1", ("HAINING", "HENAN", "E_YA")),
        ("1-2", ("N_CD", "YA_E", "E_YA")),
        ("2-1", ("NS_E", "YA_E", "E_YA")),
        ("2-2", ("S_ZHONGSHAN", "E_ZHONGSHAN2")),
    )
    origins = (
        Origin("origin1", arr["alpha1"], "1-2", "1-1"),
        Origin("origin2", arr["alpha2"], "2-1", "2-2"),
    )
    beliefs = fx["initial_beliefs"]
    x0 = tuple(beliefs[n] for n in ("N_CD", "YA_E", "E_YA", "NS_E"))
    return HybridNetwork(tuple(edges), paths, origins, x0, fx["rho"], fx["epsilon"], arr["sigma"])
