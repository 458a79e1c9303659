import numpy as np
import pytest

from hillroute.belief import (
    PrivateBeliefProfile,
    advance_information_age,
    advance_public_belief,
    observe_and_posterior,
    private_belief_age2,
    rectify_from_flows,
    update_public_beliefs,
)
from hillroute.core import NetworkConfig, PathModel

PATH = PathModel.stochastic(0.0, 10.0, 0.2, 0.8)


class TestObservation:
    def test_high_observation(self):
        assert observe_and_posterior(0.4, "H") == 1.0

    def test_low_observation(self):
        assert observe_and_posterior(0.4, "L") == 0.0

    def test_no_observation(self):
        assert observe_and_posterior(0.4, None) == 0.4

    def test_bool_states(self):
        assert observe_and_posterior(0.4, True) == 1.0
        assert observe_and_posterior(0.4, False) == 0.0


class TestAdvance:
    @pytest.mark.parametrize("post,expected", [(0.0, 0.2), (1.0, 0.8), (0.5, 0.5)])
    def test_public(self, post, expected):
        assert advance_public_belief(post, PATH) == pytest.approx(expected)

    @pytest.mark.parametrize("prev,expected", [(0.2, 0.32), (0.8, 0.68), (0.0, 0.2)])
    def test_age2(self, prev, expected):
        assert private_belief_age2(prev, PATH) == pytest.approx(expected)

    def test_affine_slope(self, rng):
        a, b = sorted(rng.random(2))
        slope = (advance_public_belief(b, PATH) - advance_public_belief(a, PATH)) / (b - a)
        assert slope == pytest.approx(PATH.q_HH - PATH.q_LH)


class TestRectification:
    def test_flow_held_up(self):
        assert rectify_from_flows(0.5, 0.3, PATH) == PATH.q_LH

    def test_flow_dropped(self):
        assert rectify_from_flows(0.2, 0.6, PATH) == PATH.q_HH

    def test_tie_counts_as_good(self):
        assert rectify_from_flows(0.4, 0.4, PATH) == PATH.q_LH


class TestInformationAge:
    def test_explorer_age_one(self):
        assert advance_information_age(True) == 1

    def test_age_caps_at_two(self):
        assert advance_information_age(False) == 2
        assert advance_information_age(False) == 2


class TestPublicUpdate:
    def test_only_observed_paths_collapse(self):
        net = NetworkConfig(PathModel.deterministic(3.0), [PATH, PATH], 0.9, 0.1)
        x = update_public_beliefs(net, (0.5, 0.5), (0.5, 0.5, 0.04), (True, True))
        assert x == pytest.approx((0.8, 0.5))

    def test_beliefs_stay_in_band(self, rng):
        for _ in range(200):
            q_LH, q_HH = rng.uniform(0.01, 0.49), rng.uniform(0.51, 0.99)
            p = PathModel.stochastic(0.0, 1.0, q_LH, q_HH)
            x = rng.random()
            for _ in range(20):
                seen = rng.choice([None, True, False])
                x = advance_public_belief(observe_and_posterior(x, seen), p)
                assert q_LH - 1e-15 <= x <= q_HH + 1e-15


class TestPrivateProfile:
    def test_initial_profile_shares_prior(self):
        prof = PrivateBeliefProfile.initial((0.3, 0.6))
        assert prof.y2 == (0.3, 0.6)
        assert prof.ages(2) == [[2, 2], [2, 2], [2, 2]]

    def test_age1_matches_public(self):
        prof = PrivateBeliefProfile.initial((0.3,))
        assert prof.age1_beliefs((0.42,)) == (0.42,)

    def test_rectified_advance(self):
        net = NetworkConfig(PathModel.deterministic(3.0), [PATH], 0.9, 0.01)
        prof = PrivateBeliefProfile.initial((0.5,))
        prof = prof.advance(net, (0.5,), (0.5, 0.5))
        assert prof.y2 == pytest.approx((private_belief_age2(0.5, PATH),))
        dropped = prof.advance(net, (0.8,), (0.8, 0.2))
        assert dropped.xhat_prev == (PATH.q_HH,)
        assert dropped.y2 == pytest.approx((0.68,))
        held = prof.advance(net, (0.2,), (0.2, 0.8))
        assert held.y2 == pytest.approx((0.32,))
        assert held.ages(1) == [[2], [1]]
