import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from app.services.exceptions import InvalidSystem, NoConvergence, NotStochastic
from app.services.mdp_sim import (
    MarkovRewardProcess,
    expected_one_step_reward,
    outlier_chain,
    random_features,
    random_mrp,
    representable_mrp,
    sample_trajectory,
    stationary_distribution,
    true_value,
)
from app.services.utils import make_rng, spawn_rngs


def test_stationary_distribution_examples(two_state_chain):
    P, _ = two_state_chain
    assert_allclose(stationary_distribution(P).pi, [5 / 6, 1 / 6], atol=1e-10)
    assert_allclose(stationary_distribution(np.full((4, 4), 0.25)).pi, 0.25)
    doubly = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
    dist = stationary_distribution(doubly)
    assert_allclose(dist.pi, 1 / 3, atol=1e-10)
    assert_allclose(dist.D, np.eye(3) / 3, atol=1e-10)


def test_stationary_distribution_is_fixed_point(rng):
    mrp = random_mrp(8, 0.9, rng)
    pi = stationary_distribution(mrp.P).pi
    assert_allclose(pi @ mrp.P, pi, atol=1e-9)
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(pi > 0.0)


def test_stationary_distribution_budget(two_state_chain):
    P, _ = two_state_chain
    with pytest.raises(NoConvergence):
        stationary_distribution(P, tol=1e-15, max_sweeps=2)


def test_expected_one_step_reward():
    mrp = MarkovRewardProcess(np.array([[0.5, 0.5], [1.0, 0.0]]), np.array([[1.0, 3.0], [2.0, 0.0]]), 0.9)
    assert_allclose(expected_one_step_reward(mrp), [2.0, 2.0])
    constant = MarkovRewardProcess(np.full((3, 3), 1 / 3), np.full((3, 3), 4.0), 0.5)
    assert_allclose(expected_one_step_reward(constant), 4.0)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 0.95])
def test_true_value_of_uniform_chain(gamma):
    mrp = MarkovRewardProcess(np.full((5, 5), 0.2), np.full((5, 5), 2.0), gamma)
    assert_allclose(true_value(mrp), 2.0 / (1.0 - gamma), rtol=1e-12)


def test_true_value_with_zero_discount(rng):
    mrp = random_mrp(4, 0.0, rng)
    assert_allclose(true_value(mrp), expected_one_step_reward(mrp), atol=1e-14)


def test_true_value_matches_truncated_series(rng):
    mrp = random_mrp(4, 0.9, rng)
    r_bar = expected_one_step_reward(mrp)
    series, term = np.zeros(4), r_bar.copy()
    for _ in range(400):
        series += term
        term = mrp.gamma * mrp.P @ term
    assert_allclose(true_value(mrp), series, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_bellman_consistency_and_value_bound(seed):
    mrp = random_mrp(6, 0.8, make_rng(seed))
    V = true_value(mrp)
    assert_allclose(V, expected_one_step_reward(mrp) + mrp.gamma * mrp.P @ V, atol=1e-10)
    assert np.max(np.abs(V)) <= mrp.r_max / (1.0 - mrp.gamma) + 1e-12


def test_absorbing_and_cyclic_trajectories(rng):
    absorbing = MarkovRewardProcess(np.eye(3), np.arange(9.0).reshape(3, 3), 0.5)
    traj = sample_trajectory(absorbing, 1, 6, rng)
    assert_array_equal(traj.states, 1)
    assert traj.next_state == 1
    cycle = MarkovRewardProcess(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[0.0, 1.0], [2.0, 0.0]]), 0.5)
    traj = sample_trajectory(cycle, 0, 5, rng)
    assert_array_equal(traj.states, [0, 1, 0, 1, 0])
    assert_array_equal(traj.rewards, [1.0, 2.0, 1.0, 2.0, 1.0])
    assert traj.T == 5


def test_trajectory_rewards_follow_transitions(rng):
    mrp = random_mrp(5, 0.7, rng)
    traj = sample_trajectory(mrp, np.full(5, 0.2), 200, rng)
    path = np.append(traj.states, traj.next_state)
    assert_array_equal(traj.rewards, mrp.R[path[:-1], path[1:]])
    assert np.all(mrp.P[path[:-1], path[1:]] > 0.0)


def test_visit_frequencies_match_stationary_distribution():
    gen = make_rng(2024)
    mrp = random_mrp(4, 0.5, gen)
    pi = stationary_distribution(mrp.P).pi
    traj = sample_trajectory(mrp, pi, 200_000, gen)
    frequencies = np.bincount(traj.states, minlength=4) / traj.T
    assert 0.5 * np.abs(frequencies - pi).sum() < 1e-2


def test_trajectories_are_reproducible():
    mrp = random_mrp(5, 0.7, make_rng(1))
    first = sample_trajectory(mrp, 0, 50, make_rng(9))
    second = sample_trajectory(mrp, 0, 50, make_rng(9))
    assert_array_equal(first.states, second.states)
    with pytest.raises(InvalidSystem):
        sample_trajectory(mrp, 0, 0, make_rng(9))


def test_outlier_chain(rng):
    mrp, features = outlier_chain(20, 1.0, 0.05, 5.0, 1.0, 0.5, rng)
    assert_allclose(mrp.P, 1 / 20)
    assert_allclose(mrp.R, 1.0)
    assert features.Phi.shape == (20, 1)
    assert features.Phi[-1, 0] == 5.0
    assert_allclose(true_value(mrp), 2.0)
    _, flat = outlier_chain(50, 1.0, 0.0, 5.0, 1.0, 0.5, rng)
    assert_allclose(flat.Phi[:-1], 1.0)
    with pytest.raises(InvalidSystem):
        outlier_chain(1, 1.0, 0.05, 5.0, 1.0, 0.5, rng)


def test_random_features_have_full_rank(rng):
    features = random_features(10, 3, rng)
    assert features.n == 3
    assert np.linalg.matrix_rank(features.Phi) == 3
    assert np.all(np.linalg.norm(features.Phi, axis=1) >= 0.5 - 1e-12)


def test_representable_process_has_linear_values(rng):
    features = random_features(6, 2, rng)
    w = np.array([1.5, -0.5])
    P = rng.dirichlet(np.ones(6), size=6)
    mrp = representable_mrp(features.Phi, w, P, 0.9)
    assert_allclose(true_value(mrp), features.Phi @ w, atol=1e-10)


def test_process_validation():
    with pytest.raises(NotStochastic):
        MarkovRewardProcess(np.array([[0.5, 0.6], [0.5, 0.5]]), np.zeros((2, 2)), 0.5)
    with pytest.raises(InvalidSystem):
        MarkovRewardProcess(np.eye(2), np.zeros((3, 3)), 0.5)
    with pytest.raises(InvalidSystem):
        MarkovRewardProcess(np.eye(2), np.zeros((2, 2)), 1.0)


def test_spawned_streams_are_independent_and_stable():
    first = [g.random() for g in spawn_rngs(3, 4)]
    second = [g.random() for g in spawn_rngs(3, 4)]
    assert first == second
    assert len(set(first)) == 4
