import math

import numpy as np
import pytest

from conftest import exact_belief_policy_cost, random_config
from hillroute.core import ContractViolation, NetworkConfig, PathModel, immediate_social_cost
from hillroute.equilibrium import sharing_flow_general, social_optimal_flow_general
from hillroute.mdp import (
    auto_horizon,
    evaluate_policy_cost,
    q_exploration_test,
    value_iteration_optimum,
)
from hillroute.mechanisms import Hiding, Sharing, SocialOptimum


def one_path(c0=3.0, c_L=0.0, c_H=10.0, q_LH=0.2, q_HH=0.8, rho=0.9, epsilon=0.01):
    return NetworkConfig(PathModel.deterministic(c0), [PathModel.stochastic(c_L, c_H, q_LH, q_HH)], rho, epsilon)


class TestValueIteration:
    def test_bellman_residual(self, rng):
        for _ in range(20):
            net = random_config(rng)
            vf = value_iteration_optimum(net)
            assert vf.bellman_residual() < (1 - net.rho) * 1e-8

    def test_value_bounds(self, rng):
        for _ in range(20):
            net = random_config(rng)
            vf = value_iteration_optimum(net)
            assert np.all(vf.values >= 0)
            assert np.all(vf.values <= net.max_immediate_cost() / (1 - net.rho) + 1e-9)

    def test_myopic_limit(self):
        net = one_path(rho=1e-6)
        vf = value_iteration_optimum(net)
        x = (net.stochastic_paths[0].q_HH,)
        immediate = immediate_social_cost(net, social_optimal_flow_general(net, x), x)
        assert vf.value((1,)) == pytest.approx(immediate, rel=1e-5)

    def test_symmetric_paths(self):
        p = PathModel.stochastic(0.0, 10.0, 0.2, 0.8)
        net = NetworkConfig(PathModel.deterministic(3.0), [p, p], 0.9, 0.01)
        vf = value_iteration_optimum(net)
        assert vf.value((0, 1)) == pytest.approx(vf.value((1, 0)), rel=1e-12)

    def test_matches_exact_chain_evaluation(self, rng):
        for _ in range(20):
            net = random_config(rng, N=1)
            x0 = rng.random()
            exact = exact_belief_policy_cost(net, lambda z: social_optimal_flow_general(net, (z,)).f, x0)
            assert value_iteration_optimum(net).value_at((x0,)) == pytest.approx(exact, rel=1e-9)

    def test_sticky_high_state_bounded_by_staying_out(self):
        # A path that is nearly always bad: the planner can do no worse than
        # keeping epsilon on it forever.
        net = one_path(c0=5.0, c_H=100.0, q_LH=0.001, q_HH=0.999, rho=0.95, epsilon=1e-3)
        e = net.epsilon
        per_slot = (1 - e) * (5.0 + 1 - e) + e * (100.0 + e)
        assert value_iteration_optimum(net).value((1,)) <= per_slot / (1 - net.rho)

    def test_too_many_paths(self):
        p = PathModel.stochastic(0.0, 10.0, 0.2, 0.8)
        net = NetworkConfig(PathModel.deterministic(3.0), [p] * 3, 0.9, 0.01)
        with pytest.raises(ContractViolation):
            value_iteration_optimum(net, max_paths=2)


class TestExplorationTest:
    def test_valuable_information_triggers_exploration(self):
        net = one_path(c0=3.0, c_L=0.0, c_H=10.0, q_LH=0.001, q_HH=0.9, rho=0.95, epsilon=0.01)
        assert q_exploration_test(net, (0.45,), 1)

    def test_myopic_user_never_explores(self):
        net = one_path(c0=3.0, q_LH=0.001, q_HH=0.9, rho=1e-6)
        assert not q_exploration_test(net, (0.45,), 1)

    def test_nothing_to_learn(self):
        net = one_path(c0=3.0, c_L=5.0, c_H=5.0)
        assert not q_exploration_test(net, (0.5,), 1)

    def test_used_path_needs_no_test(self):
        assert not q_exploration_test(one_path(c0=3.0), (0.2,), 1)

    def test_bad_index(self):
        with pytest.raises(ContractViolation):
            q_exploration_test(one_path(), (0.5,), 2)


class TestPolicyEvaluation:
    def test_nobody_explores_closed_form(self):
        net = one_path(c0=3.0, c_L=5.0, c_H=10.0)
        res = evaluate_policy_cost(net, Sharing(q_compare=False), (0.5,), T=50, M=3)
        assert res.mean == pytest.approx(4.0 * (1 - 0.9 ** 50) / (1 - 0.9), rel=1e-12)
        assert res.stderr == 0.0

    def test_same_seed_bit_identical(self):
        net = one_path()
        a = evaluate_policy_cost(net, Hiding(), (0.5,), M=20, seed=4)
        b = evaluate_policy_cost(net, Hiding(), (0.5,), M=20, seed=4)
        assert a.totals == b.totals

    def test_stderr_shrinks_with_root_m(self):
        net = one_path()
        small = evaluate_policy_cost(net, Sharing(), (0.5,), M=200, seed=1)
        large = evaluate_policy_cost(net, Sharing(), (0.5,), M=800, seed=1)
        assert large.stderr / small.stderr == pytest.approx(0.5, rel=0.2)

    def test_invalid_horizon(self):
        with pytest.raises(ContractViolation):
            evaluate_policy_cost(one_path(), Sharing(), (0.5,), T=0)

    def test_horizon_rule(self):
        net = one_path()
        T = auto_horizon(net)
        assert net.rho ** T * net.max_immediate_cost() / (1 - net.rho) < 1e-6
        assert net.rho ** (T - 1) * net.max_immediate_cost() / (1 - net.rho) >= 1e-6

    def test_simulated_optimum_matches_dp(self, rng):
        for _ in range(3):
            net = random_config(rng, N=2)
            x0 = tuple(rng.random(2))
            res = evaluate_policy_cost(net, SocialOptimum(), x0, M=300, seed=2)
            assert abs(res.mean - value_iteration_optimum(net).value_at(x0)) <= 3 * res.stderr + 1e-9

    def test_simulated_sharing_matches_exact_chain(self, rng):
        for _ in range(3):
            net = random_config(rng, N=1)
            x0 = rng.random()
            mech = Sharing()
            exact = exact_belief_policy_cost(net, lambda z: sharing_flow_general(net, (z,)).f, x0)
            res = evaluate_policy_cost(net, mech, (x0,), M=400, seed=3)
            # the automatic horizon truncates a tail worth less than 1e-6
            assert abs(res.mean - exact) <= 3 * res.stderr + 1e-6

    def test_optimum_dominates_selfish_mechanisms(self, rng):
        # The planner must keep epsilon on every path, which can cost up to
        # N eps (c_H + 1) per slot more than a crowd that never explores.
        for _ in range(5):
            net = random_config(rng, N=2)
            x0 = tuple(rng.random(2))
            c_star = value_iteration_optimum(net).value_at(x0)
            slack = net.N * net.epsilon * (max(p.c_H for p in net.stochastic_paths) + 1) / (1 - net.rho)
            for mech in (Sharing(), Hiding()):
                res = evaluate_policy_cost(net, mech, x0, M=200, seed=5)
                assert c_star <= res.mean + 3 * res.stderr + slack
