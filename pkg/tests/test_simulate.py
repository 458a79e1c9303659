import io
import json
import math

import numpy as np
import pytest

from hillroute.belief import advance_public_belief
from hillroute.core import ContractViolation, NetworkConfig, PathModel
from hillroute.mechanisms import Sharing, make_mechanism
from hillroute.simulate import (
    TRACE_FIELDS,
    episode_rng,
    run_batch,
    run_episode,
    stratified_initial_states,
)

PATH = PathModel.stochastic(0.0, 10.0, 0.2, 0.8)


def net(c0=3.0, paths=(PATH,), rho=0.9, epsilon=0.01):
    return NetworkConfig(PathModel.deterministic(c0), list(paths), rho, epsilon)


def replay_ndjson(text, rho, N):
    """Rebuild the discounted total from serialized records, in engine order."""
    per_slot = {}
    for line in text.splitlines():
        rec = json.loads(line)
        per_slot.setdefault(rec["t"], [None] * (N + 1))[rec["path"]] = rec["cost_contrib"]
    total, disc = 0.0, 1.0
    for t in sorted(per_slot):
        parts = per_slot[t]
        cost = parts[0]
        for v in parts[1:]:
            cost += v
        total += disc * cost
        disc *= rho
    return total


class TestEpisode:
    def test_unexplored_beliefs_follow_drift(self):
        cfg = net(paths=[PathModel.stochastic(5.0, 10.0, 0.2, 0.8)])
        tr = run_episode(cfg, Sharing(q_compare=False), (0.9,), T=30, seed=1)
        x = 0.9
        for step in tr.steps:
            assert step.x == (pytest.approx(x, abs=1e-15),)
            assert step.flows == (1.0, 0.0)
            x = advance_public_belief(x, cfg.stochastic_paths[0])

    def test_same_seed_same_trace(self):
        cfg = net(paths=[PATH, PATH])
        a = run_episode(cfg, make_mechanism("upr"), (0.5, 0.4), T=40, seed=3, episode=2)
        b = run_episode(cfg, make_mechanism("upr"), (0.5, 0.4), T=40, seed=3, episode=2)
        assert a.steps == b.steps and a.total == b.total

    def test_degenerate_chain_same_cost_for_belief_free_crowds(self):
        flat = [PathModel.stochastic(2.5, 2.5, 0.2, 0.8), PathModel.stochastic(3.5, 3.5, 0.1, 0.7)]
        cfg = net(paths=flat)
        totals = {m: run_batch(cfg, make_mechanism(m), (0.5, 0.5), M=10, seed=0)
                  for m in ("sharing", "hiding", "deterministic")}
        means = {m: s.mean for m, s in totals.items()}
        assert len(set(means.values())) == 1
        assert all(s.stderr < 1e-12 for s in totals.values())

    def test_replay_matches_total(self):
        cfg = net(paths=[PATH, PATH])
        for mech in ("sharing", "hiding", "upr", "optimum"):
            tr = run_episode(cfg, make_mechanism(mech), (0.5, 0.5), T=60, seed=7)
            assert tr.replay_total() == tr.total

    def test_undiscounted_accumulation(self):
        cfg = net()
        tr = run_episode(cfg, make_mechanism("optimum"), (0.5,), T=20, seed=0, discounted=False)
        assert tr.total == pytest.approx(math.fsum(s.cost for s in tr.steps))

    def test_invalid_arguments(self):
        with pytest.raises(ContractViolation):
            run_episode(net(), Sharing(), (0.5,), T=0)
        with pytest.raises(ContractViolation):
            run_episode(net(), Sharing(), (0.5, 0.5), T=3)

    def test_chain_stationarity(self):
        p = PathModel.stochastic(5.0, 10.0, 0.1, 0.7)
        cfg = net(paths=[p])
        T = 100_000
        tr = run_episode(cfg, Sharing(q_compare=False), (p.stationary_hazard,), T=T, seed=11)
        frac = np.mean([s.high[0] for s in tr.steps])
        pi = p.stationary_hazard
        lam = p.q_HH - p.q_LH
        sigma = math.sqrt(pi * (1 - pi) * (1 + lam) / (1 - lam) / T)
        assert abs(frac - pi) < 3 * sigma


class TestTraceExport:
    def test_field_order_and_replay(self):
        cfg = net(paths=[PATH, PATH])
        tr = run_episode(cfg, make_mechanism("upr"), (0.5, 0.5), T=50, seed=5)
        buf = io.StringIO()
        tr.write_ndjson(buf, cfg, {"mechanism": "upr"})
        lines = buf.getvalue().splitlines()
        assert len(lines) == 50 * 3
        assert list(json.loads(lines[0])) == ["mechanism", *TRACE_FIELDS]
        assert replay_ndjson(buf.getvalue(), cfg.rho, 2) == tr.total

    def test_signals_serialized(self):
        cfg = net(paths=[PATH, PATH])
        tr = run_episode(cfg, make_mechanism("upr"), (0.5, 0.5), T=5, seed=5)
        buf = io.StringIO()
        tr.write_ndjson(buf, cfg)
        records = [json.loads(line) for line in buf.getvalue().splitlines()]
        assert any(r["signal"] for r in records if r["t"] > 0)


class TestBatch:
    def test_single_episode_batch(self):
        cfg = net()
        for mech in ("sharing", "upr"):
            s = run_batch(cfg, make_mechanism(mech), (0.5,), T=50, M=1, seed=9)
            assert s.mean == run_episode(cfg, make_mechanism(mech), (0.5,), T=50, seed=9).total

    def test_threads_do_not_change_result(self):
        cfg = net(paths=[PATH, PATH])
        a = run_batch(cfg, make_mechanism("hiding"), (0.5, 0.5), M=16, seed=2, threads=1)
        b = run_batch(cfg, make_mechanism("hiding"), (0.5, 0.5), M=16, seed=2, threads=2)
        assert a.totals == b.totals

    def test_disjoint_seeds_compatible(self):
        cfg = net(paths=[PATH, PATH])
        a = run_batch(cfg, make_mechanism("sharing"), (0.5, 0.5), M=300, seed=100)
        b = run_batch(cfg, make_mechanism("sharing"), (0.5, 0.5), M=300, seed=200)
        assert abs(a.mean - b.mean) < 3 * math.hypot(a.stderr, b.stderr)

    def test_keep_traces(self):
        s = run_batch(net(), make_mechanism("optimum"), (0.5,), T=10, M=3, keep_traces=True)
        assert [tr.episode for tr in s.traces] == [0, 1, 2]

    def test_zero_episodes(self):
        with pytest.raises(ContractViolation):
            run_batch(net(), Sharing(), (0.5,), M=0)


class TestStratification:
    def test_strata_counts(self):
        states = stratified_initial_states((0.3, 0.75), 200, seed=4)
        assert sum(s[0] for s in states) == 60
        assert sum(s[1] for s in states) == 150

    def test_unbiased_per_episode(self):
        hits = sum(stratified_initial_states((0.37,), 10, seed)[3][0] for seed in range(4000))
        assert hits / 4000 == pytest.approx(0.37, abs=3 * math.sqrt(0.37 * 0.63 / 4000))

    def test_independent_streams(self):
        a = episode_rng(0, 0, 0).random()
        b = episode_rng(0, 0, 1).random()
        c = episode_rng(0, 1, 0).random()
        assert len({a, b, c}) == 3
