from typing import Any, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from app.config import settings

"""
Pydantic models for solver and experiment configuration in the Normalized Projections Application.

These models are shared by the services, the CLI and the HTTP routers. Each one validates its
own invariants so an invalid run is rejected before any iteration starts.
"""

ExperimentName = Literal["outlier", "steps", "momentum", "rl"]


class SolverConfig(BaseModel):
    """
    Tunables of the Total Projections iteration.

    Fields:
        p (float): Exponent of the decaying step η_k = 1/k^p, in (0.5, 1].
        beta (float): Heavy-ball multiplier β, in [0, 1).
        epsilon_guard (float): Gradient steps are skipped while ‖ΔTP‖ is below this.
        tau (int): Rows drawn per stochastic step.
        max_iters (int): Number of iterations.
        mode (str): "batch" uses every row weighted by d, "stochastic" draws tau rows by d.
        step_rule (str): "curvature" for η_k‖TP‖/‖ΔTP‖, "fixed" for a constant alpha.
        alpha (float): Step of the fixed rule, in (0, 2).
        step_decay (bool): When False η_k ≡ 1 (deterministic batch runs).
        seed (int): Seed of the row sampler, a non-negative 64-bit integer.
    """
    model_config = ConfigDict(frozen=True)

    p: float = settings.DEFAULT_P
    beta: float = settings.DEFAULT_BETA
    epsilon_guard: float = settings.EPSILON_GUARD
    tau: int = 1
    max_iters: int = 10_000
    mode: Literal["batch", "stochastic"] = "stochastic"
    step_rule: Literal["curvature", "fixed"] = "curvature"
    alpha: float = 1.0
    step_decay: bool = True
    seed: int = Field(default=settings.DEFAULT_SEED, ge=0, lt=2**64)

    @field_validator("p")
    @classmethod
    def check_p(cls, v):
        if not 0.5 < v <= 1.0:
            raise ValueError("p must lie in (0.5, 1]")
        return v

    @field_validator("beta")
    @classmethod
    def check_beta(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        return v

    @field_validator("epsilon_guard")
    @classmethod
    def check_epsilon(cls, v):
        if v <= 0.0:
            raise ValueError("epsilon_guard must be positive")
        return v

    @field_validator("tau", "max_iters")
    @classmethod
    def check_positive(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @model_validator(mode="after")
    def check_alpha(self):
        if self.step_rule == "fixed" and not 0.0 < self.alpha < 2.0:
            raise ValueError("fixed step requires alpha in (0, 2)")
        return self


_EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "outlier": dict(m=20, n=1, repetitions=1000),
    "steps": dict(m=200, n=5, iterations=300, beta=0.5, tolerance=1e-6, epsilon_guard=1e-14),
    "momentum": dict(m=200, n=5, repetitions=10, iterations=600, tolerance=1e-6),
    "rl": dict(
        m=10, n=2, repetitions=3, iterations=20_000, gamma=0.8, beta=0.5,
        tolerance=0.05, reward_noise=0.2, return_horizon=40,
    ),
}


class ExperimentConfig(BaseModel):
    """
    Parameters of one experiment run.

    Fields:
        name (str): One of outlier, steps, momentum, rl.
        m (int): Number of states or equations.
        n (int): Number of features.
        mu (float): Mean of the non-outlier features.
        sigma (float): Standard deviation of the non-outlier features.
        p_outlier (float): Outlier feature multiplier.
        r (float): Constant reward of the outlier chain.
        gamma (float): Discount factor.
        repetitions (int): Independent repetitions, each with its own seeded stream.
        seed (int): Root seed, a non-negative 64-bit integer.
        iterations (int): Solver iterations per run.
        p (float): Step decay exponent for stochastic runs.
        beta (float): Momentum of the momentum-carrying variant.
        betas (list[float]): Momentum sweep.
        tolerance (float): Convergence threshold checked at the end of the run.
        epsilon_guard (float): Epsilon guard of the curvature step.
        episode_length (int): States reported per Monte Carlo episode.
        return_horizon (int, optional): Extra steps used to accumulate returns.
        trajectory_length (int): States per TD(0) trajectory.
        reward_noise (float): Half-width of the uniform noise added to representable rewards.
        out (str, optional): Output directory.
    """
    model_config = ConfigDict(frozen=True)

    name: ExperimentName
    m: int = 20
    n: int = 1
    mu: float = 1.0
    sigma: float = 0.05
    p_outlier: float = 5.0
    r: float = 1.0
    gamma: float = 0.5
    repetitions: int = 1
    seed: int = Field(default=settings.DEFAULT_SEED, ge=0, lt=2**64)
    iterations: int = 300
    p: float = settings.DEFAULT_P
    beta: float = settings.DEFAULT_BETA
    betas: list[float] = Field(default_factory=lambda: [0.0, 0.3, 0.5, 0.7, 0.9])
    tolerance: float = 1e-6
    epsilon_guard: float = settings.EPSILON_GUARD
    episode_length: int = 1
    return_horizon: Optional[int] = None
    trajectory_length: int = 2
    reward_noise: float = 0.5
    out: Optional[str] = None

    @classmethod
    def for_experiment(cls, name: str, **overrides) -> "ExperimentConfig":
        """
        Build a config from the experiment's defaults and explicit overrides.

        Args:
            name (str): Experiment name.
            **overrides: Field values; None values are ignored.
        Returns:
            ExperimentConfig: The validated config.
        """
        values = dict(_EXPERIMENT_DEFAULTS.get(name, {}))
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(name=name, **values)

    @field_validator("m", "n", "repetitions", "iterations", "episode_length")
    @classmethod
    def check_positive(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("gamma")
    @classmethod
    def check_gamma(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        return v

    @field_validator("beta")
    @classmethod
    def check_beta(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        return v

    @field_validator("betas")
    @classmethod
    def check_betas(cls, v):
        if not v or any(not 0.0 <= b < 1.0 for b in v):
            raise ValueError("every beta must lie in [0, 1)")
        return v

    @model_validator(mode="after")
    def check_instance(self):
        if self.m < self.n:
            raise ValueError("need m >= n")
        if self.name == "outlier" and self.n != 1:
            raise ValueError("the outlier chain has a single feature")
        if self.name == "outlier" and (self.m < 2 or self.sigma < 0.0):
            raise ValueError("the outlier chain needs m >= 2 and sigma >= 0")
        if self.trajectory_length < 2:
            raise ValueError("trajectory_length must be at least 2")
        if self.return_horizon is not None and self.return_horizon < 0:
            raise ValueError("return_horizon must be non-negative")
        return self


class BoundReport(BaseModel):
    """
    Result of an error-bound check.

    Fields:
        kind (str): "normalized" for the Normalized TD(0) bound, "classic" for regular TD(0).
        gamma (float): Discount factor of the instance.
        lhs (float): Left-hand side.
        rhs (float): Right-hand side, already divided by 1 − γ.
        holds (bool): lhs <= rhs up to rounding.
        audit (dict): Intermediate quantities of the check.
    """
    kind: Literal["normalized", "classic"]
    gamma: float
    lhs: float
    rhs: float
    holds: bool
    audit: dict[str, Any] = Field(default_factory=dict)
