from dataclasses import dataclass, field
from typing import Callable, Optional
import numpy as np
import pandas as pd
from app.models.schemas import SolverConfig
from app.services.exceptions import InvalidSystem, StepUndefined
from app.services.linear_model import (
    OverdeterminedSystem,
    WeightVector,
    as_weight_vector,
    normalized_error,
)
from app.services.logging import logger
from app.services.utils import make_rng

"""
Total Projections Service for the Normalized Projections Application.

This module implements the Total Projections iteration

    w_{k+1} = w_k − α_k TP_k(w_k) + β (w_k − w_{k−1})

where TP_k averages the projections of w_k onto the hyperplanes of a batch of rows, α_k is
either a fixed constant or the curvature step η_k‖TP‖/‖ΔTP‖, and η_k = 1/k^p.

The iteration driver `run_iterations` is shared with the value estimators, which feed it
batches built from sampled trajectories instead of rows of a fixed system.
"""


@dataclass(frozen=True, eq=False)
class RowBatch:
    """
    Rows (φ_i, ṽ_i) taking part in one step.

    Fields:
        Phi (np.ndarray): τ×n rows, none of them zero.
        targets (np.ndarray): Possibly noisy targets ṽ_i, length τ.
        weights (np.ndarray, optional): Averaging weights summing to 1; uniform 1/τ when omitted.
    """
    Phi: np.ndarray
    targets: np.ndarray
    weights: Optional[np.ndarray] = None
    sq_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if Phi.shape[0] == 0 or targets.shape != (Phi.shape[0],):
            raise InvalidSystem("batch must hold at least one row and one target per row")
        sq_norms = np.einsum("ij,ij->i", Phi, Phi)
        if np.any(sq_norms == 0.0):
            raise InvalidSystem("batch contains a zero feature row")
        tau = Phi.shape[0]
        weights = np.full(tau, 1.0 / tau) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape != (tau,) or not np.all(np.isfinite(weights)) or np.any(weights < 0.0):
            raise InvalidSystem(f"batch weights must be {tau} non-negative finite numbers")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise InvalidSystem(f"batch weights sum to {weights.sum():.12g}, expected 1")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "sq_norms", sq_norms)

    @property
    def tau(self) -> int:
        return self.Phi.shape[0]

    def curvature_matrix(self) -> np.ndarray:
        """Σ ω_i φ_iφ_iᵀ/‖φ_i‖², the map taking TP to ΔTP."""
        return (self.Phi.T * (self.weights / self.sq_norms)) @ self.Phi


@dataclass(frozen=True, eq=False)
class IterateState:
    """
    Two-deep iterate history.

    Fields:
        w_k (np.ndarray): Current iterate.
        w_prev (np.ndarray): Previous iterate.
        k (int): Index of the next step, starting at 1.
        theta (float): Curvature step θ of the step that produced w_k (nan if none).
        alpha (float): Step length α applied to TP in that step.
        skipped (bool): True when that step's gradient part was skipped by the epsilon guard.
    """
    w_k: np.ndarray
    w_prev: np.ndarray
    k: int = 1
    theta: float = float("nan")
    alpha: float = 0.0
    skipped: bool = False

    @classmethod
    def start(cls, w0: WeightVector) -> "IterateState":
        w0 = np.array(w0, dtype=float)
        return cls(w0, w0.copy(), 1)


@dataclass
class TraceRecord:
    k: int
    err: float
    g: float
    theta: float
    alpha: float
    skipped: bool


@dataclass
class SolveTrace:
    """
    Per-iteration log of a run, one record per executed step.

    Fields:
        records (list[TraceRecord]): Step records in order.
        degenerate_pairs (int): TD pairs dropped because φ_s − γφ_s' vanished.
    """
    records: list[TraceRecord] = field(default_factory=list)
    degenerate_pairs: int = 0

    COLUMNS = ["k", "err", "g", "theta", "alpha", "skipped"]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.err for r in self.records])

    @property
    def objective(self) -> np.ndarray:
        return np.array([r.g for r in self.records])

    @property
    def skipped_steps(self) -> int:
        return sum(r.skipped for r in self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.records], columns=self.COLUMNS)


def tp_update(batch: RowBatch, w: WeightVector) -> np.ndarray:
    """
    Total Projections direction over a batch.

    Args:
        batch (RowBatch): Rows of the step.
        w (WeightVector): Current iterate.
    Returns:
        np.ndarray: Σ ω_i ((φ_iᵀw − ṽ_i)/‖φ_i‖²) φ_i.
    """
    scaled = batch.weights * (batch.Phi @ w - batch.targets) / batch.sq_norms
    return batch.Phi.T @ scaled


def delta_tp(batch: RowBatch, w: WeightVector) -> np.ndarray:
    """
    Change of TP across one unit step, TP(w) − TP(w − TP(w)).

    TP is affine in w, so this equals curvature_matrix() @ TP(w).

    Args:
        batch (RowBatch): Rows of the step.
        w (WeightVector): Current iterate.
    Returns:
        np.ndarray: ΔTP(w).
    """
    tp = tp_update(batch, w)
    return tp - tp_update(batch, w - tp)


def curvature_step(batch: RowBatch, w: WeightVector, epsilon_guard: float) -> float:
    """
    Curvature step θ = ‖TP‖²/‖ΔTP‖.

    Args:
        batch (RowBatch): Rows of the step.
        w (WeightVector): Current iterate.
        epsilon_guard (float): Smallest accepted ‖ΔTP‖.
    Returns:
        float: θ > 0.
    Raises:
        StepUndefined: If ‖ΔTP‖ < epsilon_guard.
    """
    tp = tp_update(batch, w)
    dtp_norm = float(np.linalg.norm(delta_tp(batch, w)))
    if dtp_norm < epsilon_guard:
        raise StepUndefined(f"||ΔTP|| = {dtp_norm:.3e} below guard {epsilon_guard:.1e}")
    return float(tp @ tp) / dtp_norm


def step(state: IterateState, batch: RowBatch, cfg: SolverConfig) -> IterateState:
    """
    Advance the iteration by one step.

    Args:
        state (IterateState): Current history, k >= 1.
        batch (RowBatch): Rows of this step.
        cfg (SolverConfig): Step rule, decay and momentum.
    Returns:
        IterateState: (w_{k+1}, w_k, k + 1) with the step's θ, α and skip flag.

    Note:
        When the epsilon guard fires, only the momentum term is applied.
    """
    tp = tp_update(batch, state.w_k)
    theta, alpha, skipped = float("nan"), 0.0, False
    if cfg.step_rule == "fixed":
        alpha = cfg.alpha
    else:
        eta = 1.0 / state.k ** cfg.p if cfg.step_decay else 1.0
        try:
            theta = curvature_step(batch, state.w_k, cfg.epsilon_guard)
            alpha = eta * theta / float(np.linalg.norm(tp))
        except StepUndefined:
            skipped = True
    w_next = state.w_k - alpha * tp + cfg.beta * (state.w_k - state.w_prev)
    return IterateState(w_next, state.w_k, state.k + 1, theta, alpha, skipped)


def full_batch(sys: OverdeterminedSystem, tau: int, rng: np.random.Generator) -> RowBatch:
    """Every row of the system, averaged with the row weights d."""
    return RowBatch(sys.Phi, sys.V, sys.d)


def sample_rows(sys: OverdeterminedSystem, tau: int, rng: np.random.Generator) -> RowBatch:
    """
    Draw tau rows i.i.d. with probabilities d by inverse CDF.

    Args:
        sys (OverdeterminedSystem): Source system.
        tau (int): Batch size.
        rng (np.random.Generator): Seeded generator.
    Returns:
        RowBatch: Sampled rows with uniform averaging weights.
    """
    cdf = np.cumsum(sys.d)
    idx = np.minimum(np.searchsorted(cdf, rng.random(tau), side="right"), sys.m - 1)
    return RowBatch(sys.Phi[idx], sys.V[idx])


Sampler = Callable[[OverdeterminedSystem, int, np.random.Generator], RowBatch]


def run_iterations(
    next_batch: Callable[[], Optional[RowBatch]],
    cfg: SolverConfig,
    w0: WeightVector,
    w_star: Optional[WeightVector] = None,
    objective: Optional[Callable[[np.ndarray], float]] = None,
) -> tuple[np.ndarray, SolveTrace]:
    """
    Run cfg.max_iters steps on batches supplied by a callback.

    Args:
        next_batch (Callable): Returns the batch of the next step, or None when no usable
            rows were drawn (the step then only applies momentum).
        cfg (SolverConfig): Solver settings.
        w0 (WeightVector): Starting point.
        w_star (WeightVector, optional): Reference solution for the err column.
        objective (Callable, optional): Criterion evaluated for the g column.
    Returns:
        tuple[np.ndarray, SolveTrace]: Final iterate and the trace.
    """
    state = IterateState.start(w0)
    trace = SolveTrace()
    for _ in range(cfg.max_iters):
        k = state.k
        batch = next_batch()
        if batch is None:
            w_next = state.w_k + cfg.beta * (state.w_k - state.w_prev)
            state = IterateState(w_next, state.w_k, k + 1, skipped=True)
        else:
            state = step(state, batch, cfg)
        err = float(np.linalg.norm(state.w_k - w_star)) if w_star is not None else float("nan")
        g = objective(state.w_k) if objective is not None else float("nan")
        trace.records.append(TraceRecord(k, err, g, state.theta, state.alpha, state.skipped))
    if trace.skipped_steps:
        logger.warning(f"{trace.skipped_steps} of {len(trace)} steps skipped by the epsilon guard")
    return state.w_k, trace


def solve(
    sys: OverdeterminedSystem,
    cfg: SolverConfig,
    sampler: Optional[Sampler] = None,
    w0: Optional[WeightVector] = None,
    w_star: Optional[WeightVector] = None,
) -> tuple[np.ndarray, SolveTrace]:
    """
    Solve the system under the scale-invariant criterion.

    Args:
        sys (OverdeterminedSystem): System to solve.
        cfg (SolverConfig): Solver settings; cfg.mode picks the default sampler.
        sampler (Sampler, optional): Row sampler overriding cfg.mode.
        w0 (WeightVector, optional): Starting point, zero by default.
        w_star (WeightVector, optional): Reference solution for the trace.
    Returns:
        tuple[np.ndarray, SolveTrace]: Final iterate and the trace, deterministic given cfg.seed.
    """
    if sampler is None:
        sampler = full_batch if cfg.mode == "batch" else sample_rows
    w0 = np.zeros(sys.n) if w0 is None else as_weight_vector(w0, sys.n)
    if w_star is not None:
        w_star = as_weight_vector(w_star, sys.n)
    rng = make_rng(cfg.seed)
    return run_iterations(
        lambda: sampler(sys, cfg.tau, rng),
        cfg,
        w0,
        w_star,
        lambda w: normalized_error(sys, w),
    )
