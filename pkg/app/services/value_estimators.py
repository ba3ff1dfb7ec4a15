from dataclasses import dataclass
import math
from typing import Optional
import numpy as np
from app.models.schemas import BoundReport, SolverConfig
from app.services.exceptions import AssertionFailed, DegeneratePair, InvalidSystem
from app.services.linear_model import (
    OverdeterminedSystem,
    WeightVector,
    as_weight_vector,
    least_squares_solution,
    normalized_error,
    scale_invariant_solution,
    solve_guarded,
)
from app.services.logging import logger
from app.services.mdp_sim import (
    FeatureMap,
    MarkovRewardProcess,
    Trajectory,
    expected_one_step_reward,
    sample_trajectory,
    stationary_distribution,
    true_value,
)
from app.services.tensor_ops import (
    Tensor3,
    build_probability_tensor,
    mode_p_multiply,
    slice_contract_product,
    slice_transform_product,
    transpose,
)
from app.services.total_projections import IterateState, RowBatch, SolveTrace, run_iterations, step
from app.services.utils import make_rng

"""
Value Estimators Service for the Normalized Projections Application.

This module applies Total Projections to policy evaluation:

    Normalized Monte Carlo   projects onto the hyperplanes φ_sᵀw = Ṽ_s of first-visit returns,
                             and converges to w^M, the minimizer of Σ π_s (φ_sᵀw − V_s)²/‖φ_s‖².
    Normalized TD(0)         projects onto φ_sᵀw − γφ_s'ᵀw = R_ss' for sampled transitions,
                             and converges to w^N, the solution of
                             Σ_s π_s Σ_s' P_ss' L_ss'L_ss'ᵀ w = Σ_s π_s Σ_s' P_ss' ρ_ss' L_ss'
                             with L_ss' = Δφ_ss'/‖Δφ_ss'‖ and ρ_ss' = R_ss'/‖Δφ_ss'‖.

Both fixed points are available in closed form; w^N is computed twice, by explicit loops and
through the tensor products of tensor_ops, and the two must agree.
"""

DEGENERATE_NORM = 1e-12


@dataclass
class McEstimate:
    """
    Result of a Normalized Monte Carlo run.

    Fields:
        w (np.ndarray): Final estimate of w^M.
        trace (SolveTrace): Per-episode trace, err measured against w^M.
        episodes (int): Episodes consumed.
    """
    w: np.ndarray
    trace: SolveTrace
    episodes: int


@dataclass(frozen=True, eq=False)
class TdPairSample:
    """
    One normalized TD(0) equation L_ss'ᵀw = ρ_ss'.

    Fields:
        s (int): Source state.
        s_next (int): Successor state.
        L (np.ndarray): Unit vector Δφ_ss'/‖Δφ_ss'‖.
        rho (float): R_ss'/‖Δφ_ss'‖.
    """
    s: int
    s_next: int
    L: np.ndarray
    rho: float


def _features(Phi) -> np.ndarray:
    return Phi.Phi if isinstance(Phi, FeatureMap) else FeatureMap(Phi).Phi


def return_horizon(gamma: float, r_max: float = 1.0, tol: float = 1e-8) -> int:
    """
    Number of extra steps after which the discounted tail is below tol.

    Args:
        gamma (float): Discount factor.
        r_max (float): Largest absolute reward.
        tol (float): Accepted truncation bias.
    Returns:
        int: H with γ^H r_max/(1 − γ) <= tol.
    """
    if gamma == 0.0 or r_max == 0.0:
        return 0
    return max(0, math.ceil(math.log(tol * (1.0 - gamma) / r_max) / math.log(gamma)))


def first_visit_mc_targets(trajectory: Trajectory, gamma: float, horizon: int = 0) -> list[tuple[int, float]]:
    """
    First-visit discounted returns of a trajectory.

    The returns are accumulated scanning from the last state to the first. A state met again
    earlier in the scan is overwritten, so each state keeps the return of its first occurrence
    in time.

    Args:
        trajectory (Trajectory): Sampled path.
        gamma (float): Discount factor.
        horizon (int): Trailing states that only feed returns; states are reported from the
            first T − horizon positions.
    Returns:
        list[tuple[int, float]]: (state, Ṽ) pairs in order of first occurrence.
    """
    window = trajectory.T - horizon
    if window < 1:
        raise InvalidSystem(f"trajectory of {trajectory.T} states leaves nothing before horizon {horizon}")
    discounted = 0.0
    returns: dict[int, float] = {}
    for i in range(trajectory.T - 1, -1, -1):
        discounted = trajectory.rewards[i] + gamma * discounted
        if i < window:
            returns[int(trajectory.states[i])] = discounted
    order = dict.fromkeys(int(s) for s in trajectory.states[:window])
    return [(s, returns[s]) for s in order]


def normalized_mc_step(
    state: IterateState,
    targets: list[tuple[int, float]],
    Phi,
    cfg: SolverConfig,
) -> IterateState:
    """
    One Monte Carlo step: a Total Projections step over the first-visit hyperplanes.

    Args:
        state (IterateState): (w_k, w_{k−1}, k).
        targets (list[tuple[int, float]]): First-visit (state, Ṽ) pairs, nonempty.
        Phi: m×n features or FeatureMap.
        cfg (SolverConfig): Solver settings.
    Returns:
        IterateState: The advanced state.
    """
    if not targets:
        raise InvalidSystem("Monte Carlo step needs at least one target")
    Phi = _features(Phi)
    states = [s for s, _ in targets]
    return step(state, RowBatch(Phi[states], [v for _, v in targets]), cfg)


def mc_system(mrp: MarkovRewardProcess, Phi) -> OverdeterminedSystem:
    """The system Φw = V weighted by π whose scale-invariant solution is w^M."""
    pi = stationary_distribution(mrp.P).pi
    return OverdeterminedSystem(_features(Phi), true_value(mrp), pi)


def mc_fixed_point(mrp: MarkovRewardProcess, Phi) -> WeightVector:
    """
    Closed-form Normalized Monte Carlo fixed point w^M = (ΦᵀNDNΦ)⁻¹ΦᵀNDN V.

    Args:
        mrp (MarkovRewardProcess): The process.
        Phi: m×n features or FeatureMap, rank n.
    Returns:
        WeightVector: w^M.
    """
    return scale_invariant_solution(mc_system(mrp, Phi))


def normalized_mc_solve(
    mrp: MarkovRewardProcess,
    Phi,
    cfg: SolverConfig,
    episode_length: int = 1,
    horizon: Optional[int] = None,
    w0: Optional[WeightVector] = None,
) -> McEstimate:
    """
    Normalized Monte Carlo over cfg.max_iters episodes.

    Each episode starts from a π-distributed state, runs episode_length + horizon steps and
    contributes the first-visit returns of its first episode_length states as one batch.

    Args:
        mrp (MarkovRewardProcess): The process.
        Phi: m×n features or FeatureMap, rank n.
        cfg (SolverConfig): Solver settings; cfg.seed drives all sampling.
        episode_length (int): States reported per episode.
        horizon (int, optional): Return horizon; return_horizon(γ, R_max) by default.
        w0 (WeightVector, optional): Starting point, zero by default.
    Returns:
        McEstimate: Final estimate, trace measured against w^M, episodes used.
    """
    Phi = _features(Phi)
    system = mc_system(mrp, Phi)
    w_star = scale_invariant_solution(system)
    horizon = return_horizon(mrp.gamma, mrp.r_max) if horizon is None else horizon
    w0 = np.zeros(Phi.shape[1]) if w0 is None else as_weight_vector(w0, Phi.shape[1])
    rng = make_rng(cfg.seed)

    def next_batch():
        trajectory = sample_trajectory(mrp, system.d, episode_length + horizon, rng)
        targets = first_visit_mc_targets(trajectory, mrp.gamma, horizon)
        return RowBatch(Phi[[s for s, _ in targets]], [v for _, v in targets])

    w, trace = run_iterations(next_batch, cfg, w0, w_star, lambda w: normalized_error(system, w))
    return McEstimate(w, trace, cfg.max_iters)


def _unique_pairs(trajectory: Trajectory) -> list[int]:
    seen, positions = set(), []
    for i in range(trajectory.T - 1):
        pair = (int(trajectory.states[i]), int(trajectory.states[i + 1]))
        if pair not in seen:
            seen.add(pair)
            positions.append(i)
    return positions


def td_pair_stream(trajectory: Trajectory, Phi, gamma: float, skip_degenerate: bool = False) -> list[TdPairSample]:
    """
    Normalized TD(0) equations of the distinct transitions of a trajectory.

    Args:
        trajectory (Trajectory): Path with at least two states.
        Phi: m×n features or FeatureMap.
        gamma (float): Discount factor.
        skip_degenerate (bool): Drop pairs with ‖Δφ‖ < 1e-12 instead of raising.
    Returns:
        list[TdPairSample]: One sample per pair, in order of first occurrence.
    Raises:
        DegeneratePair: On a degenerate pair when skip_degenerate is False.
    """
    if trajectory.T < 2:
        raise InvalidSystem("TD(0) needs trajectories of at least two states")
    Phi = _features(Phi)
    samples = []
    for i in _unique_pairs(trajectory):
        s, s_next = int(trajectory.states[i]), int(trajectory.states[i + 1])
        delta = Phi[s] - gamma * Phi[s_next]
        norm = float(np.linalg.norm(delta))
        if norm < DEGENERATE_NORM:
            if skip_degenerate:
                logger.warning(f"Skipping degenerate pair ({s}, {s_next})")
                continue
            logger.error(f"Degenerate pair ({s}, {s_next}) in trajectory")
            raise DegeneratePair(s, s_next)
        samples.append(TdPairSample(s, s_next, delta / norm, float(trajectory.rewards[i]) / norm))
    return samples


def normalized_td0_solve(
    mrp: MarkovRewardProcess,
    Phi,
    cfg: SolverConfig,
    trajectory_length: int = 2,
    w0: Optional[WeightVector] = None,
) -> tuple[np.ndarray, SolveTrace]:
    """
    Normalized TD(0) over cfg.max_iters trajectories.

    Args:
        mrp (MarkovRewardProcess): The process.
        Phi: m×n features or FeatureMap.
        cfg (SolverConfig): Solver settings; cfg.seed drives all sampling.
        trajectory_length (int): States per trajectory, at least 2.
        w0 (WeightVector, optional): Starting point, zero by default.
    Returns:
        tuple[np.ndarray, SolveTrace]: Final iterate and trace, err measured against w^N
            (nan when a reachable pair is degenerate and w^N is undefined).
    """
    Phi = _features(Phi)
    pi = stationary_distribution(mrp.P).pi
    try:
        w_star = td0_fixed_point_bruteforce(mrp, Phi)
    except DegeneratePair as e:
        logger.warning(f"No w^N reference for the trace: {str(e)}")
        w_star = None
    w0 = np.zeros(Phi.shape[1]) if w0 is None else as_weight_vector(w0, Phi.shape[1])
    rng = make_rng(cfg.seed)
    degenerate = 0

    def next_batch():
        nonlocal degenerate
        trajectory = sample_trajectory(mrp, pi, trajectory_length, rng)
        samples = td_pair_stream(trajectory, Phi, mrp.gamma, skip_degenerate=True)
        degenerate += len(_unique_pairs(trajectory)) - len(samples)
        if not samples:
            return None
        return RowBatch([x.L for x in samples], [x.rho for x in samples])

    w, trace = run_iterations(next_batch, cfg, w0, w_star, lambda w: normalized_bellman_objective(mrp, Phi, w, pi))
    trace.degenerate_pairs = degenerate
    return w, trace


def _pair_terms(mrp: MarkovRewardProcess, Phi: np.ndarray, s: int, s_next: int) -> tuple[np.ndarray, float]:
    delta = Phi[s] - mrp.gamma * Phi[s_next]
    norm = float(np.linalg.norm(delta))
    if norm < DEGENERATE_NORM:
        logger.error(f"Reachable degenerate pair ({s}, {s_next})")
        raise DegeneratePair(s, s_next)
    return delta / norm, mrp.R[s, s_next] / norm


def normalized_td_system_loops(mrp: MarkovRewardProcess, Phi) -> tuple[np.ndarray, np.ndarray]:
    """
    Left and right sides of the w^N equations, summed term by term.

    Returns:
        tuple[np.ndarray, np.ndarray]: (Σ π_s P_ss' L Lᵀ, Σ π_s P_ss' ρ L) over pairs with P_ss' > 0.
    """
    Phi = _features(Phi)
    pi = stationary_distribution(mrp.P).pi
    n = Phi.shape[1]
    A, b = np.zeros((n, n)), np.zeros(n)
    for s in range(mrp.m):
        for s_next in range(mrp.m):
            weight = pi[s] * mrp.P[s, s_next]
            if weight == 0.0:
                continue
            L, rho = _pair_terms(mrp, Phi, s, s_next)
            A += weight * np.outer(L, L)
            b += weight * rho * L
    return A, b


def td_tensors(mrp: MarkovRewardProcess, Phi) -> tuple[Tensor3, np.ndarray, Tensor3]:
    """
    Tensors 𝓛 (m×m×n), 𝓡 (m×m) and 𝒫 (m×m×m) of the closed-form w^N.

    Pairs with P_ss' = 0 hold zeros in 𝓛 and 𝓡.
    """
    Phi = _features(Phi)
    m, n = Phi.shape
    L = np.zeros((m, m, n))
    rho = np.zeros((m, m))
    for s, s_next in zip(*np.nonzero(mrp.P)):
        L[s, s_next], rho[s, s_next] = _pair_terms(mrp, Phi, int(s), int(s_next))
    return Tensor3(L), rho, build_probability_tensor(mrp.P)


def normalized_td_system_tensor(mrp: MarkovRewardProcess, Phi) -> tuple[np.ndarray, np.ndarray]:
    """
    Left and right sides of the w^N equations through tensor products.

    A = (𝓛ᵀ ⨯̈ 𝒫 ⨯̈ 𝓛) ×₁ 𝟙ᵀD and b = (𝓛ᵀ ⨯̈ 𝒫 ⋊̈ 𝓡)ᵀ π.
    """
    L, rho, prob = td_tensors(mrp, Phi)
    pi = stationary_distribution(mrp.P).pi
    weighted = slice_transform_product(transpose(L), prob)
    A = mode_p_multiply(slice_transform_product(weighted, L), pi[None, :], 1).data[0]
    b = slice_contract_product(weighted, rho).T @ pi
    return A, b


def td0_fixed_point_bruteforce(mrp: MarkovRewardProcess, Phi) -> WeightVector:
    """w^N from the explicitly summed equations."""
    A, b = normalized_td_system_loops(mrp, Phi)
    return solve_guarded(A, b, "normalized TD(0) fixed-point equations")


def td0_fixed_point_tensor(mrp: MarkovRewardProcess, Phi) -> WeightVector:
    """w^N from the tensor form of the equations."""
    A, b = normalized_td_system_tensor(mrp, Phi)
    return solve_guarded(A, b, "normalized TD(0) tensor equations")


def td0_fixed_point_classic(mrp: MarkovRewardProcess, Phi) -> WeightVector:
    """Regular TD(0) fixed point w^T solving ΦᵀD(Φ − γPΦ)w = ΦᵀDR̄."""
    Phi = _features(Phi)
    pi = stationary_distribution(mrp.P).pi
    weighted = Phi.T * pi
    A = weighted @ (Phi - mrp.gamma * mrp.P @ Phi)
    return solve_guarded(A, weighted @ expected_one_step_reward(mrp), "TD(0) fixed-point equations")


def normalized_bellman_objective(
    mrp: MarkovRewardProcess,
    Phi,
    w: WeightVector,
    pi: Optional[np.ndarray] = None,
) -> float:
    """
    Criterion minimized by w^N: Σ_s π_s Σ_s' P_ss' ((Δφ_ss'ᵀw − R_ss')/‖Δφ_ss'‖)².

    Pairs with P_ss' = 0 or a vanishing Δφ do not contribute. Pass pi to skip recomputing
    the stationary distribution.
    """
    Phi = _features(Phi)
    pi = stationary_distribution(mrp.P).pi if pi is None else pi
    values = Phi @ w
    delta_norms = np.linalg.norm(Phi[:, None, :] - mrp.gamma * Phi[None, :, :], axis=2)
    live = (mrp.P > 0.0) & (delta_norms >= DEGENERATE_NORM)
    errors = np.where(live, values[:, None] - mrp.gamma * values[None, :] - mrp.R, 0.0)
    scaled = np.divide(errors, delta_norms, out=np.zeros_like(errors), where=live)
    return float(pi @ (mrp.P * scaled ** 2).sum(axis=1))


def inverse_distance_matrix(mrp: MarkovRewardProcess, Phi) -> np.ndarray:
    """
    𝒩 with 𝒩_ss' = 1/‖φ_s − γφ_s'‖ on reachable pairs, 0 where P_ss' = 0.

    Raises:
        DegeneratePair: If a reachable pair has φ_s = γφ_s'.
    """
    Phi = _features(Phi)
    norms = np.linalg.norm(Phi[:, None, :] - mrp.gamma * Phi[None, :, :], axis=2)
    reachable = mrp.P > 0.0
    bad = np.argwhere(reachable & (norms < DEGENERATE_NORM))
    if bad.size:
        s, s_next = (int(x) for x in bad[0])
        logger.error(f"Reachable degenerate pair ({s}, {s_next})")
        raise DegeneratePair(s, s_next)
    return np.divide(1.0, norms, out=np.zeros_like(norms), where=reachable)


def d_norm(x: np.ndarray, pi: np.ndarray) -> float:
    """‖x‖_D = √(Σ π_s x_s²)."""
    return float(np.sqrt(np.asarray(pi) @ np.asarray(x) ** 2))


def _check_value_matrix_identities(mrp: MarkovRewardProcess, V: np.ndarray):
    value_matrix = V[:, None] * np.ones(mrp.m)[None, :]
    ones = np.ones(mrp.m)
    checks = {
        "(P∘𝒱)𝟙 = V": np.allclose((mrp.P * value_matrix) @ ones, V, atol=1e-10),
        "(P∘𝒱ᵀ)𝟙 = PV": np.allclose((mrp.P * value_matrix.T) @ ones, mrp.P @ V, atol=1e-10),
        "V = R̄ + γPV": np.allclose(V, expected_one_step_reward(mrp) + mrp.gamma * mrp.P @ V, atol=1e-10),
    }
    failed = [name for name, ok in checks.items() if not ok]
    if failed:
        logger.error(f"Value matrix identities failed: {failed}")
        raise AssertionFailed(f"value matrix identities failed: {failed}")


def check_error_bound(mrp: MarkovRewardProcess, Phi) -> BoundReport:
    """
    Compare the Normalized TD(0) error with the least-squares error.

    Checks ‖𝒩(V^N − V)‖_D <= ‖𝒩(V^L − V)‖_D/(1 − γ), with V^N = Φw^N, V^L = Φw^L the π-weighted
    least-squares fit of V, and 𝒩 acting on a value vector x through its value matrix:

        𝒩x = [(𝒩 ∘ x𝟙ᵀ) ∘ P]·𝟙 = n̄ ∘ x,   n̄ = (𝒩 ∘ P)·𝟙

    The audit carries n̄, both normalized Bellman residuals ‖𝒩(U − γPU − R̄)‖_D and the pair
    criterion minimized by w^N at w^N and w^L.

    Args:
        mrp (MarkovRewardProcess): The process.
        Phi: m×n features or FeatureMap of rank n.
    Returns:
        BoundReport: lhs, rhs, holds and the audit.
    """
    Phi = _features(Phi)
    pi = stationary_distribution(mrp.P).pi
    V = true_value(mrp)
    _check_value_matrix_identities(mrp, V)
    r_bar = expected_one_step_reward(mrp)
    n_bar = (inverse_distance_matrix(mrp, Phi) * mrp.P).sum(axis=1)
    w_n = td0_fixed_point_bruteforce(mrp, Phi)
    w_l = least_squares_solution(OverdeterminedSystem(Phi, V, pi))
    v_n, v_l = Phi @ w_n, Phi @ w_l
    lhs = d_norm(n_bar * (v_n - V), pi)
    rhs = d_norm(n_bar * (v_l - V), pi) / (1.0 - mrp.gamma)
    audit = {
        "n_bar": n_bar.tolist(),
        "w_n": w_n.tolist(),
        "w_l": w_l.tolist(),
        "bellman_residual_n": d_norm(n_bar * (v_n - mrp.gamma * mrp.P @ v_n - r_bar), pi),
        "bellman_residual_l": d_norm(n_bar * (v_l - mrp.gamma * mrp.P @ v_l - r_bar), pi),
        "pair_objective_n": normalized_bellman_objective(mrp, Phi, w_n),
        "pair_objective_l": normalized_bellman_objective(mrp, Phi, w_l),
    }
    holds = lhs <= rhs * (1.0 + 1e-9) + 1e-12
    if not holds:
        logger.warning(f"Normalized TD(0) bound violated: lhs={lhs:.6g} rhs={rhs:.6g}")
    return BoundReport(kind="normalized", gamma=mrp.gamma, lhs=lhs, rhs=rhs, holds=holds, audit=audit)


def check_classic_bound(mrp: MarkovRewardProcess, Phi) -> BoundReport:
    """
    Regular TD(0) bound ‖V^T − V‖_D <= ‖V^L − V‖_D/(1 − γ), V^L the π-weighted projection of V.

    Args:
        mrp (MarkovRewardProcess): The process.
        Phi: m×n features or FeatureMap of rank n.
    Returns:
        BoundReport: lhs, rhs, holds; the audit holds both weight vectors.
    """
    Phi = _features(Phi)
    pi = stationary_distribution(mrp.P).pi
    V = true_value(mrp)
    w_t = td0_fixed_point_classic(mrp, Phi)
    w_l = least_squares_solution(OverdeterminedSystem(Phi, V, pi))
    lhs = d_norm(Phi @ w_t - V, pi)
    rhs = d_norm(Phi @ w_l - V, pi) / (1.0 - mrp.gamma)
    holds = lhs <= rhs * (1.0 + 1e-9) + 1e-12
    audit = {"w_t": w_t.tolist(), "w_l": w_l.tolist()}
    return BoundReport(kind="classic", gamma=mrp.gamma, lhs=lhs, rhs=rhs, holds=holds, audit=audit)
