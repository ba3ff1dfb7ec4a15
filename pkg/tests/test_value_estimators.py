import numpy as np
import pytest
from numpy.testing import assert_allclose
from app.models.schemas import SolverConfig
from app.services.exceptions import DegeneratePair, InvalidSystem
from app.services.linear_model import least_squares_solution, scale_invariant_solution
from app.services.mdp_sim import (
    FeatureMap,
    MarkovRewardProcess,
    Trajectory,
    outlier_chain,
    random_features,
    random_mrp,
    representable_mrp,
    stationary_distribution,
    true_value,
)
from app.services.total_projections import IterateState
from app.services.utils import make_rng
from app.services.value_estimators import (
    check_classic_bound,
    check_error_bound,
    d_norm,
    first_visit_mc_targets,
    inverse_distance_matrix,
    mc_fixed_point,
    mc_system,
    normalized_bellman_objective,
    normalized_mc_solve,
    normalized_mc_step,
    normalized_td0_solve,
    normalized_td_system_loops,
    normalized_td_system_tensor,
    return_horizon,
    td0_fixed_point_bruteforce,
    td0_fixed_point_classic,
    td0_fixed_point_tensor,
    td_pair_stream,
)


def _noisy_representable(seed: int, m: int = 10, n: int = 2, gamma: float = 0.8):
    gen = make_rng(seed)
    P = gen.dirichlet(np.ones(m), size=m)
    features = random_features(m, n, gen)
    mrp = representable_mrp(features.Phi, gen.normal(size=n), P, gamma, 0.2, gen)
    return mrp, features


def test_first_visit_targets_examples():
    two = Trajectory(np.array([0, 1]), np.array([1.0, 1.0]), 1)
    assert first_visit_mc_targets(two, 0.5) == [(0, 1.5), (1, 1.0)]
    single = Trajectory(np.array([3]), np.array([2.5]), 0)
    assert first_visit_mc_targets(single, 0.9) == [(3, 2.5)]


def test_first_visit_keeps_first_occurrence():
    path = Trajectory(np.array([0, 1, 0]), np.array([1.0, 2.0, 3.0]), 1)
    assert first_visit_mc_targets(path, 0.5) == [(0, 2.75), (1, 3.5)]


def test_first_visit_horizon_only_feeds_returns():
    path = Trajectory(np.array([0, 1, 2]), np.array([1.0, 1.0, 1.0]), 0)
    assert first_visit_mc_targets(path, 0.5, horizon=1) == [(0, 1.75), (1, 1.5)]
    with pytest.raises(InvalidSystem):
        first_visit_mc_targets(path, 0.5, horizon=3)


def test_return_horizon():
    assert return_horizon(0.5, 1.0, 1e-8) == 28
    assert return_horizon(0.0, 1.0) == 0
    assert 0.9 ** return_horizon(0.9, 2.0) * 2.0 / 0.1 <= 1e-8


def test_normalized_mc_step_matches_hand_computation():
    cfg = SolverConfig(step_rule="fixed", alpha=1.0, beta=0.0)
    nxt = normalized_mc_step(IterateState.start(np.zeros(1)), [(0, 1.0), (1, 1.0)], [[1.0], [2.0]], cfg)
    assert nxt.w_k[0] == pytest.approx(0.75)


def test_normalized_mc_step_at_fixed_point():
    Phi = np.array([[1.0], [2.0]])
    cfg = SolverConfig(step_rule="fixed", alpha=1.0, beta=0.0)
    nxt = normalized_mc_step(IterateState.start(np.array([1.5])), [(0, 1.5), (1, 3.0)], Phi, cfg)
    assert nxt.w_k[0] == pytest.approx(1.5)
    with pytest.raises(InvalidSystem):
        normalized_mc_step(IterateState.start(np.zeros(1)), [], Phi, cfg)


def test_mc_fixed_point_of_square_features(rng):
    mrp = random_mrp(3, 0.7, rng)
    Phi = np.array([[1.0, 0.0, 0.5], [0.0, 2.0, 0.0], [1.0, 1.0, 1.0]])
    assert_allclose(mc_fixed_point(mrp, Phi), np.linalg.solve(Phi, true_value(mrp)), atol=1e-10)


def test_mc_fixed_point_with_unit_features_is_least_squares(rng):
    Phi = rng.normal(size=(5, 2))
    Phi /= np.linalg.norm(Phi, axis=1, keepdims=True)
    mrp = MarkovRewardProcess(np.full((5, 5), 0.2), rng.uniform(size=(5, 5)), 0.6)
    assert_allclose(mc_fixed_point(mrp, Phi), least_squares_solution(mc_system(mrp, Phi)), atol=1e-10)


def test_mc_fixed_point_zeroes_expected_update(small_process):
    mrp, features = small_process
    w = mc_fixed_point(mrp, features)
    pi = stationary_distribution(mrp.P).pi
    Phi, V = features.Phi, true_value(mrp)
    residual = Phi.T @ (pi * (Phi @ w - V) / np.sum(Phi ** 2, axis=1))
    assert_allclose(residual, 0.0, atol=1e-10)


@pytest.mark.parametrize("c", [0.1, 10.0])
def test_mc_fixed_point_is_scale_invariant(small_process, c):
    mrp, features = small_process
    scaled = mc_system(mrp, features).with_row_scaled(3, c)
    assert_allclose(scale_invariant_solution(scaled), mc_fixed_point(mrp, features), atol=1e-10)


def test_mc_fixed_point_of_identical_features():
    mrp = MarkovRewardProcess(np.array([[0.9, 0.1], [0.5, 0.5]]), np.array([[1.0, 0.0], [3.0, 2.0]]), 0.5)
    w = mc_fixed_point(mrp, np.ones((2, 1)))
    assert w[0] == pytest.approx(stationary_distribution(mrp.P).pi @ true_value(mrp))


def test_normalized_mc_solve_reaches_fixed_point():
    mrp, features = _noisy_representable(seed=31)
    cfg = SolverConfig(beta=0.5, p=1.0, max_iters=20_000, seed=1)
    estimate = normalized_mc_solve(mrp, features, cfg, episode_length=1, horizon=40)
    assert estimate.episodes == 20_000
    assert np.linalg.norm(estimate.w - mc_fixed_point(mrp, features)) < 0.05
    assert estimate.trace.errors[-1] < estimate.trace.errors[0]


def test_td_pair_stream_with_zero_discount():
    Phi = np.array([[3.0, 4.0], [1.0, 0.0]])
    path = Trajectory(np.array([0, 1]), np.array([10.0, 1.0]), 0)
    (sample,) = td_pair_stream(path, Phi, 0.0)
    assert_allclose(sample.L, [0.6, 0.8])
    assert sample.rho == pytest.approx(2.0)
    assert np.linalg.norm(sample.L) == pytest.approx(1.0, abs=1e-12)


def test_td_pair_stream_degenerate_pair():
    path = Trajectory(np.array([0, 0]), np.array([1.0, 1.0]), 0)
    with pytest.raises(DegeneratePair):
        td_pair_stream(path, np.array([[1.0]]), 1.0)
    assert td_pair_stream(path, np.array([[1.0]]), 1.0, skip_degenerate=True) == []


def test_td_pair_stream_deduplicates_pairs():
    path = Trajectory(np.array([0, 1, 0, 1]), np.array([1.0, 2.0, 3.0, 4.0]), 0)
    samples = td_pair_stream(path, np.array([[1.0], [2.0]]), 0.9)
    assert [(x.s, x.s_next) for x in samples] == [(0, 1), (1, 0)]
    with pytest.raises(InvalidSystem):
        td_pair_stream(Trajectory(np.array([0]), np.array([1.0]), 1), np.array([[1.0], [2.0]]), 0.9)


def test_td_fixed_point_scalar_closed_form(two_state_chain):
    P, features = two_state_chain
    R = np.array([[1.0, -1.0], [2.0, 0.5]])
    mrp = MarkovRewardProcess(P, R, 0.3)
    pi = stationary_distribution(P).pi
    num = den = 0.0
    for s in range(2):
        for t in range(2):
            delta = features.Phi[s, 0] - 0.3 * features.Phi[t, 0]
            L, rho = np.sign(delta), R[s, t] / abs(delta)
            num += pi[s] * P[s, t] * rho * L
            den += pi[s] * P[s, t] * L * L
    assert td0_fixed_point_bruteforce(mrp, features)[0] == pytest.approx(num / den, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_tensor_and_loop_fixed_points_agree(seed):
    gen = make_rng(seed)
    m, n = int(gen.integers(3, 9)), int(gen.integers(1, 5))
    n = min(n, m)
    mrp = random_mrp(m, float(gen.uniform(0.1, 0.95)), gen)
    Phi = gen.normal(size=(m, n))
    A_loop, b_loop = normalized_td_system_loops(mrp, Phi)
    A_tensor, b_tensor = normalized_td_system_tensor(mrp, Phi)
    assert_allclose(A_tensor, A_loop, atol=1e-12)
    assert_allclose(b_tensor, b_loop, atol=1e-12)
    w = td0_fixed_point_bruteforce(mrp, Phi)
    assert_allclose(td0_fixed_point_tensor(mrp, Phi), w, atol=1e-9)
    assert_allclose(A_loop @ w - b_loop, 0.0, atol=1e-10)


def test_td_fixed_point_of_self_loop():
    mrp = MarkovRewardProcess(np.array([[1.0]]), np.array([[3.0]]), 0.5)
    Phi = np.array([[2.0]])
    assert td0_fixed_point_bruteforce(mrp, Phi)[0] == pytest.approx(3.0)
    assert td0_fixed_point_tensor(mrp, Phi)[0] == pytest.approx(3.0)


def test_td_fixed_point_recovers_consistent_weights(rng):
    features = random_features(7, 3, rng)
    w = np.array([0.5, -1.0, 2.0])
    mrp = representable_mrp(features.Phi, w, rng.dirichlet(np.ones(7), size=7), 0.9)
    assert_allclose(td0_fixed_point_bruteforce(mrp, features), w, atol=1e-9)
    assert_allclose(td0_fixed_point_tensor(mrp, features), w, atol=1e-9)
    assert_allclose(td0_fixed_point_classic(mrp, features), w, atol=1e-9)


def test_reachable_degenerate_pair_is_an_error():
    mrp = MarkovRewardProcess(np.full((2, 2), 0.5), np.ones((2, 2)), 0.5)
    Phi = np.array([[1.0], [2.0]])
    with pytest.raises(DegeneratePair):
        td0_fixed_point_bruteforce(mrp, Phi)
    with pytest.raises(DegeneratePair):
        inverse_distance_matrix(mrp, Phi)


def test_td_solve_skips_degenerate_pairs():
    mrp = MarkovRewardProcess(np.full((2, 2), 0.5), np.ones((2, 2)), 0.5)
    cfg = SolverConfig(max_iters=200, seed=4)
    w, trace = normalized_td0_solve(mrp, np.array([[1.0], [2.0]]), cfg)
    assert trace.degenerate_pairs > 0
    assert trace.skipped_steps >= trace.degenerate_pairs
    assert np.all(np.isnan(trace.errors))
    assert np.all(np.isfinite(w))


def test_normalized_td0_solve_reaches_fixed_point():
    mrp, features = _noisy_representable(seed=32)
    cfg = SolverConfig(beta=0.5, p=1.0, max_iters=20_000, seed=2)
    w, trace = normalized_td0_solve(mrp, features, cfg, trajectory_length=2)
    assert np.linalg.norm(w - td0_fixed_point_bruteforce(mrp, features)) < 0.05
    assert trace.errors[-1] < trace.errors[0]
    assert trace.degenerate_pairs == 0


def test_td_fixed_point_minimizes_pair_objective(small_process, rng):
    mrp, features = small_process
    w = td0_fixed_point_bruteforce(mrp, features)
    best = normalized_bellman_objective(mrp, features, w)
    for offset in rng.normal(scale=0.5, size=(50, 2)):
        assert best <= normalized_bellman_objective(mrp, features, w + offset) + 1e-12


def test_inverse_distance_matrix_zero_on_unreachable_pairs():
    mrp = MarkovRewardProcess(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros((2, 2)), 0.5)
    N = inverse_distance_matrix(mrp, np.array([[1.0], [4.0]]))
    assert_allclose(N, [[0.0, 1.0], [1 / 3.5, 0.0]])


def test_d_norm_examples(rng):
    x = rng.normal(size=4)
    assert d_norm(x, np.full(4, 0.25)) == pytest.approx(np.linalg.norm(x) / 2.0)
    assert d_norm(np.zeros(3), np.full(3, 1 / 3)) == 0.0
    assert d_norm(np.array([1.0, -1.0]), np.array([5 / 6, 1 / 6])) == pytest.approx(1.0)


def test_error_bound_in_representable_case(rng):
    features = random_features(6, 2, rng)
    mrp = representable_mrp(features.Phi, np.array([1.0, 2.0]), rng.dirichlet(np.ones(6), size=6), 0.8)
    report = check_error_bound(mrp, features)
    assert report.holds
    assert report.lhs == pytest.approx(0.0, abs=1e-9)
    assert report.rhs == pytest.approx(0.0, abs=1e-9)
    assert set(report.audit) >= {"n_bar", "w_n", "w_l", "bellman_residual_n", "pair_objective_n"}


@pytest.mark.parametrize("seed", range(100))
def test_error_bound_holds_on_random_processes(seed):
    gen = make_rng(1000 + seed)
    m = int(gen.integers(5, 9))
    n = int(gen.integers(1, 3))
    mrp = random_mrp(m, float(gen.uniform(0.7, 0.9)), gen, state_rewards=True)
    report = check_error_bound(mrp, random_features(m, n, gen))
    assert report.holds, (report.lhs, report.rhs)


def test_error_bound_holds_on_outlier_chain():
    mrp, features = outlier_chain(20, 1.0, 0.05, 5.0, 1.0, 0.5, make_rng(0))
    report = check_error_bound(mrp, features)
    assert report.kind == "normalized"
    assert report.holds


def test_error_bound_reports_violation_for_square_features(rng):
    mrp = random_mrp(3, 0.8, rng)
    Phi = np.array([[1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.0, 0.3, 1.0]])
    report = check_error_bound(mrp, Phi)
    assert report.rhs == pytest.approx(0.0, abs=1e-10)
    assert report.lhs > 1e-6
    assert not report.holds


@pytest.mark.parametrize("seed", range(20))
def test_classic_bound_holds(seed):
    gen = make_rng(seed)
    mrp = random_mrp(6, float(gen.uniform(0.1, 0.95)), gen)
    report = check_classic_bound(mrp, FeatureMap(gen.normal(size=(6, 2))))
    assert report.kind == "classic"
    assert report.holds


def test_classic_fixed_point_with_square_features_is_true_value(rng):
    mrp = random_mrp(5, 0.8, rng)
    Phi = rng.normal(size=(5, 5))
    assert_allclose(Phi @ td0_fixed_point_classic(mrp, Phi), true_value(mrp), atol=1e-8)
