from dataclasses import dataclass
from typing import Optional
import numpy as np
from app.config import settings
from app.services.exceptions import InvalidSystem, NoConvergence, NotStochastic
from app.services.linear_model import solve_guarded
from app.services.logging import logger

"""
Markov Reward Process Service for the Normalized Projections Application.

A fixed policy is pre-composed into the transition matrix P and the transition rewards R,
so a process is just (P, R, γ). This module computes its stationary distribution, one-step
expected rewards and exact values, samples trajectories from it, and generates the instances
the experiments run on.
"""


def check_stochastic(P: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """
    Validate a row-stochastic matrix.

    Args:
        P (np.ndarray): Square matrix.
        atol (float): Tolerance on the row sums.
    Returns:
        np.ndarray: P as a float array.
    Raises:
        NotStochastic: If P is not square, has a negative entry or a row not summing to 1.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise NotStochastic(f"transition matrix must be square, got shape {P.shape}")
    if np.any(P < 0.0) or not np.all(np.isfinite(P)):
        raise NotStochastic("transition matrix has negative or non-finite entries")
    bad = np.flatnonzero(np.abs(P.sum(axis=1) - 1.0) > atol)
    if bad.size:
        raise NotStochastic(f"rows {bad.tolist()} of the transition matrix do not sum to 1")
    return P


@dataclass(frozen=True, eq=False)
class MarkovRewardProcess:
    """
    Markov reward process under a fixed policy.

    Fields:
        P (np.ndarray): Row-stochastic m×m transition matrix.
        R (np.ndarray): m×m transition rewards R_ss'.
        gamma (float): Discount factor in [0, 1).
    """
    P: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        P = check_stochastic(self.P)
        R = np.asarray(self.R, dtype=float)
        if R.shape != P.shape or not np.all(np.isfinite(R)):
            raise InvalidSystem(f"reward matrix must be finite with shape {P.shape}")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidSystem(f"gamma must lie in [0, 1), got {self.gamma}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)

    @property
    def m(self) -> int:
        return self.P.shape[0]

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.R)))


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    """
    Stationary distribution π of an ergodic chain.

    Fields:
        pi (np.ndarray): Positive probability vector with πP = π.
    """
    pi: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.pi)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """
    State features.

    Fields:
        Phi (np.ndarray): m×n matrix, row s is φ_sᵀ, no zero rows.
    """
    Phi: np.ndarray

    def __post_init__(self):
        Phi = np.asarray(self.Phi, dtype=float)
        if Phi.ndim == 1:
            Phi = Phi.reshape(-1, 1)
        if Phi.ndim != 2 or not np.all(np.isfinite(Phi)):
            raise InvalidSystem("features must be a finite matrix")
        if np.any(np.linalg.norm(Phi, axis=1) == 0.0):
            raise InvalidSystem("a state has the zero feature vector")
        object.__setattr__(self, "Phi", Phi)

    @property
    def n(self) -> int:
        return self.Phi.shape[1]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Sampled path S_0, R_1, S_1, ..., S_{T−1}, R_T.

    Fields:
        states (np.ndarray): S_0..S_{T−1}.
        rewards (np.ndarray): R_1..R_T, R_{i+1} earned on leaving S_i.
        next_state (int): S_T, the state the last reward leads to.
    """
    states: np.ndarray
    rewards: np.ndarray
    next_state: int

    @property
    def T(self) -> int:
        return len(self.states)


def stationary_distribution(
    P: np.ndarray,
    tol: Optional[float] = None,
    max_sweeps: Optional[int] = None,
) -> StationaryDistribution:
    """
    Stationary distribution by power iteration from the uniform vector.

    Args:
        P (np.ndarray): Row-stochastic matrix of an irreducible aperiodic chain.
        tol (float, optional): L1 residual ‖πP − π‖₁ to reach; settings.STATIONARY_TOLERANCE by default.
        max_sweeps (int, optional): Sweep budget; settings.STATIONARY_MAX_SWEEPS by default.
    Returns:
        StationaryDistribution: π with πP = π and Σπ = 1.
    Raises:
        NoConvergence: If the residual is not met or π has a zero entry.
    """
    P = check_stochastic(P)
    tol = settings.STATIONARY_TOLERANCE if tol is None else tol
    max_sweeps = settings.STATIONARY_MAX_SWEEPS if max_sweeps is None else max_sweeps
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_sweeps):
        nxt = pi @ P
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - pi).sum())
        pi = nxt
        if residual < tol:
            break
    else:
        logger.error(f"Power iteration stopped at residual {residual:.3e} after {max_sweeps} sweeps")
        raise NoConvergence(f"power iteration did not reach {tol:.1e} in {max_sweeps} sweeps")
    if np.any(pi <= 0.0):
        logger.error("Stationary distribution has zero entries")
        raise NoConvergence("chain is not ergodic: stationary distribution has zero entries")
    return StationaryDistribution(pi)


def expected_one_step_reward(mrp: MarkovRewardProcess) -> np.ndarray:
    """R̄ = (R ∘ P)·𝟙."""
    return (mrp.R * mrp.P).sum(axis=1)


def true_value(mrp: MarkovRewardProcess) -> np.ndarray:
    """
    Exact value vector, the solution of (I − γP)V = R̄.

    Args:
        mrp (MarkovRewardProcess): The process.
    Returns:
        np.ndarray: V.
    """
    A = np.eye(mrp.m) - mrp.gamma * mrp.P
    return solve_guarded(A, expected_one_step_reward(mrp), "Bellman equation")


def _draw(cdf: np.ndarray, rng: np.random.Generator) -> int:
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), cdf.shape[0] - 1)


def sample_trajectory(
    mrp: MarkovRewardProcess,
    start: int | np.ndarray,
    T: int,
    rng: np.random.Generator,
) -> Trajectory:
    """
    Sample a path of T states.

    Args:
        mrp (MarkovRewardProcess): The process.
        start (int | np.ndarray): Start state, or a distribution to draw it from.
        T (int): Number of recorded states, at least 1.
        rng (np.random.Generator): Seeded generator, the only source of randomness.
    Returns:
        Trajectory: States S_0..S_{T−1}, rewards R_1..R_T and S_T.
    """
    if T < 1:
        raise InvalidSystem("trajectory needs at least one state")
    cdfs = np.cumsum(mrp.P, axis=1)
    s = int(start) if np.isscalar(start) else _draw(np.cumsum(start), rng)
    states = np.empty(T, dtype=int)
    rewards = np.empty(T)
    for i in range(T):
        s_next = _draw(cdfs[s], rng)
        states[i] = s
        rewards[i] = mrp.R[s, s_next]
        s = s_next
    return Trajectory(states, rewards, s)


def outlier_chain(
    m: int,
    mu: float,
    sigma: float,
    p_outlier: float,
    r: float,
    gamma: float,
    rng: np.random.Generator,
) -> tuple[MarkovRewardProcess, FeatureMap]:
    """
    Fully connected chain with one outlier feature.

    Every state moves to every state with probability 1/m and earns r, so all values equal
    r/(1 − γ). States 0..m−2 get a Normal(μ, σ) feature, state m−1 gets p_outlier·μ.

    Args:
        m (int): Number of states, at least 2.
        mu (float): Feature mean.
        sigma (float): Feature standard deviation; 0 gives identical features.
        p_outlier (float): Outlier multiplier.
        r (float): Constant reward.
        gamma (float): Discount factor.
        rng (np.random.Generator): Seeded generator.
    Returns:
        tuple[MarkovRewardProcess, FeatureMap]: The chain and its single-feature map.
    """
    if m < 2 or sigma < 0.0:
        raise InvalidSystem("outlier chain needs m >= 2 and sigma >= 0")
    P = np.full((m, m), 1.0 / m)
    R = np.full((m, m), float(r))
    phi = np.empty(m)
    phi[:-1] = rng.normal(mu, sigma, size=m - 1)
    phi[-1] = p_outlier * mu
    return MarkovRewardProcess(P, R, gamma), FeatureMap(phi.reshape(-1, 1))


def random_mrp(m: int, gamma: float, rng: np.random.Generator, state_rewards: bool = False) -> MarkovRewardProcess:
    """
    Random ergodic process with Dirichlet(1) transition rows and Uniform[0, 1] rewards.

    Args:
        m (int): Number of states.
        gamma (float): Discount factor.
        rng (np.random.Generator): Seeded generator.
        state_rewards (bool): When True R_ss' depends on s only.
    Returns:
        MarkovRewardProcess: The process.
    """
    P = rng.dirichlet(np.ones(m), size=m)
    if state_rewards:
        R = np.repeat(rng.uniform(0.0, 1.0, size=(m, 1)), m, axis=1)
    else:
        R = rng.uniform(0.0, 1.0, size=(m, m))
    return MarkovRewardProcess(P, R, gamma)


def random_features(m: int, n: int, rng: np.random.Generator) -> FeatureMap:
    """
    Features spread over n orthogonal directions.

    Row s points along ±q_{s mod n} of a random orthonormal frame, jittered by N(0, 0.2²)
    and scaled by a Uniform[0.5, 2] length, so every direction carries a share of the states.
    """
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    base = Q.T[np.arange(m) % n] * rng.choice([-1.0, 1.0], size=(m, 1))
    rows = base + 0.2 * rng.normal(size=(m, n))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return FeatureMap(rows * rng.uniform(0.5, 2.0, size=(m, 1)))


def representable_mrp(
    Phi: np.ndarray,
    w: np.ndarray,
    P: np.ndarray,
    gamma: float,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> MarkovRewardProcess:
    """
    Process whose pair rewards make Φw an exact solution of every TD equation.

    R_ss' = V_s − γV_s' with V = Φw, plus Uniform[−noise, noise] perturbations when noise > 0.

    Args:
        Phi (np.ndarray): m×n features.
        w (np.ndarray): Weights generating V.
        P (np.ndarray): Transition matrix.
        gamma (float): Discount factor.
        noise (float): Half-width of the reward perturbation.
        rng (np.random.Generator, optional): Required when noise > 0.
    Returns:
        MarkovRewardProcess: The process.
    """
    V = np.asarray(Phi, dtype=float) @ np.asarray(w, dtype=float)
    R = V[:, None] - gamma * V[None, :]
    if noise > 0.0:
        R = R + rng.uniform(-noise, noise, size=R.shape)
    return MarkovRewardProcess(P, R, gamma)
