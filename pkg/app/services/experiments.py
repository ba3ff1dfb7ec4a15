from dataclasses import dataclass, field
import time
from typing import Any, Callable
import numpy as np
import pandas as pd
from app.config import settings
from app.models.schemas import BoundReport, ExperimentConfig, SolverConfig
from app.services.linear_model import (
    OverdeterminedSystem,
    least_squares_solution,
    scale_invariant_solution,
)
from app.services.logging import logger
from app.services.mdp_sim import outlier_chain, random_features, representable_mrp
from app.services.total_projections import SolveTrace, solve
from app.services.utils import config_hash, make_rng, spawn_rngs
from app.services.value_estimators import (
    check_classic_bound,
    check_error_bound,
    mc_fixed_point,
    mc_system,
    normalized_mc_solve,
    normalized_td0_solve,
    td0_fixed_point_bruteforce,
    td0_fixed_point_tensor,
)

"""
Experiments Service for the Normalized Projections Application.

Each experiment turns an ExperimentConfig into an ExperimentReport: named tables ready for
CSV, the bound checks it ran, and the list of run-time checks that failed. Repetitions draw
from independent streams split off the root seed, so a report depends only on its config.
"""

ORACLE_AGREEMENT = 1e-9


@dataclass
class ExperimentReport:
    """
    Result record of one experiment.

    Fields:
        name (str): Experiment name.
        config (dict): Full config echo.
        config_hash (str): SHA-256 of the config echo.
        tables (dict[str, pd.DataFrame]): Result tables by name.
        bounds (list[BoundReport]): Bound checks run during the experiment.
        failures (list[str]): Run-time checks that failed; empty on success.
        wall_time (float): Seconds spent; not persisted, so reruns stay byte-identical.
    """
    name: str
    config: dict[str, Any]
    config_hash: str
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    bounds: list[BoundReport] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures

    def metadata(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "schema_version": settings.SCHEMA_VERSION,
            "config": self.config,
            "config_hash": self.config_hash,
            "bounds": [b.model_dump() for b in self.bounds],
            "failures": self.failures,
        }


def random_system(m: int, n: int, rng: np.random.Generator) -> OverdeterminedSystem:
    """System with Φ and V drawn from Uniform[−1, 1] and uniform row weights."""
    return OverdeterminedSystem(rng.uniform(-1.0, 1.0, size=(m, n)), rng.uniform(-1.0, 1.0, size=m))


def _trace_frame(trace: SolveTrace, **labels) -> pd.DataFrame:
    frame = trace.to_frame()
    for position, (column, value) in enumerate(labels.items()):
        frame.insert(position, column, value)
    return frame


def _first_below(errors: np.ndarray, threshold: float) -> int:
    hits = np.flatnonzero(errors <= threshold)
    return int(hits[0]) + 1 if hits.size else -1


def run_outlier_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Per-state errors of w^M and w^L on the outlier chain, averaged over repetitions.

    Errors are V_s − φ_sᵀw. The bound check runs on the first repetition's chain.

    Args:
        cfg (ExperimentConfig): Outlier chain parameters and repetitions.
    Returns:
        ExperimentReport: Table "errors" with one row per state.
    """
    report = _new_report(cfg)
    totals = np.zeros((4, cfg.m))
    for rep, rng in enumerate(spawn_rngs(cfg.seed, cfg.repetitions)):
        mrp, features = outlier_chain(cfg.m, cfg.mu, cfg.sigma, cfg.p_outlier, cfg.r, cfg.gamma, rng)
        system = mc_system(mrp, features)
        err_m = system.V - system.Phi @ scale_invariant_solution(system)
        err_l = system.V - system.Phi @ least_squares_solution(system)
        totals += np.vstack([err_m, err_l, np.abs(err_m), np.abs(err_l)])
        if rep == 0:
            report.bounds.append(check_error_bound(mrp, features))
    means = totals / cfg.repetitions
    report.tables["errors"] = pd.DataFrame({
        "state": np.arange(cfg.m),
        "mean_error_normalized": means[0],
        "mean_error_least_squares": means[1],
        "mean_abs_error_normalized": means[2],
        "mean_abs_error_least_squares": means[3],
    })
    _collect_bound_failures(report)
    return report


def run_step_comparison(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Batch traces of plain TP (α = 1), curvature step, and curvature step with momentum.

    Args:
        cfg (ExperimentConfig): System size, iterations, beta and tolerance.
    Returns:
        ExperimentReport: Tables "traces" (variant, k, err, ...) and "summary".
    """
    report = _new_report(cfg)
    system = random_system(cfg.m, cfg.n, make_rng(cfg.seed))
    w_star = scale_invariant_solution(system)
    common = dict(mode="batch", step_decay=False, max_iters=cfg.iterations,
                  epsilon_guard=cfg.epsilon_guard, seed=cfg.seed)
    variants = {
        "plain": SolverConfig(step_rule="fixed", alpha=1.0, beta=0.0, **common),
        "curvature": SolverConfig(step_rule="curvature", beta=0.0, **common),
        "curvature_momentum": SolverConfig(step_rule="curvature", beta=cfg.beta, **common),
    }
    frames, summary = [], []
    for variant, solver in variants.items():
        _, trace = solve(system, solver, w_star=w_star)
        errors = trace.errors
        frames.append(_trace_frame(trace, variant=variant))
        summary.append({
            "variant": variant,
            "final_err": float(errors[-1]),
            "iterations_to_tolerance": _first_below(errors, cfg.tolerance),
        })
        if errors[-1] > cfg.tolerance:
            report.failures.append(f"{variant} ended at error {errors[-1]:.3e} > {cfg.tolerance:.1e}")
        if variant == "curvature" and np.any(np.diff(errors) > 1e-9 * errors[:-1] + 1e-13):
            report.failures.append("curvature-step trace is not monotone")
    report.tables["traces"] = pd.concat(frames, ignore_index=True)
    report.tables["summary"] = pd.DataFrame(summary)
    reached = {row["variant"]: row["iterations_to_tolerance"] for row in summary}
    if reached["plain"] > 0 and not 0 < reached["curvature_momentum"] < reached["plain"]:
        report.failures.append("curvature step with momentum was not faster than plain TP")
    return report


def run_momentum_comparison(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Mean batch error traces of heavy-ball TP (α = 1) over a sweep of β.

    Args:
        cfg (ExperimentConfig): System size, repetitions, iterations, betas and tolerance.
    Returns:
        ExperimentReport: Tables "traces" (beta, k, mean_err) and "summary".
    """
    report = _new_report(cfg)
    totals = {beta: np.zeros(cfg.iterations) for beta in cfg.betas}
    for rng in spawn_rngs(cfg.seed, cfg.repetitions):
        system = random_system(cfg.m, cfg.n, rng)
        w_star = scale_invariant_solution(system)
        for beta in cfg.betas:
            solver = SolverConfig(mode="batch", step_rule="fixed", alpha=1.0, beta=beta,
                                  step_decay=False, max_iters=cfg.iterations, seed=cfg.seed)
            _, trace = solve(system, solver, w_star=w_star)
            totals[beta] += trace.errors
    frames, summary = [], []
    for beta, total in totals.items():
        mean = total / cfg.repetitions
        frames.append(pd.DataFrame({"beta": beta, "k": np.arange(1, cfg.iterations + 1), "mean_err": mean}))
        converged = bool(np.isfinite(mean[-1]) and mean[-1] <= cfg.tolerance)
        summary.append({"beta": beta, "final_mean_err": float(mean[-1]), "converged": converged})
        if not converged:
            report.failures.append(f"beta={beta} ended at mean error {mean[-1]:.3e}")
    report.tables["traces"] = pd.concat(frames, ignore_index=True)
    report.tables["summary"] = pd.DataFrame(summary)
    return report


def run_rl_estimators(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Normalized Monte Carlo and TD(0) against their closed-form fixed points.

    Each repetition builds a random process whose rewards make Φw_true nearly exact
    (R_ss' = V_s − γV_s' plus Uniform[−reward_noise, reward_noise]), runs both estimators, and
    checks the distances to w^M and w^N, the agreement of the two w^N computations and both
    error bounds.

    Args:
        cfg (ExperimentConfig): Instance size, discount, solver settings and tolerance.
    Returns:
        ExperimentReport: Tables "estimators" (one row per repetition) and "traces".
    """
    report = _new_report(cfg)
    rows, frames = [], []
    for rep, rng in enumerate(spawn_rngs(cfg.seed, cfg.repetitions)):
        P = rng.dirichlet(np.ones(cfg.m), size=cfg.m)
        features = random_features(cfg.m, cfg.n, rng)
        w_true = rng.normal(size=cfg.n)
        mrp = representable_mrp(features.Phi, w_true, P, cfg.gamma, cfg.reward_noise, rng)
        solver = SolverConfig(p=cfg.p, beta=cfg.beta, epsilon_guard=cfg.epsilon_guard,
                              max_iters=cfg.iterations, seed=int(rng.integers(2**31)))

        w_m = mc_fixed_point(mrp, features)
        w_n = td0_fixed_point_bruteforce(mrp, features)
        w_n_tensor = td0_fixed_point_tensor(mrp, features)
        mc = normalized_mc_solve(mrp, features, solver, cfg.episode_length, cfg.return_horizon)
        w_td, td_trace = normalized_td0_solve(mrp, features, solver, cfg.trajectory_length)
        bound = check_error_bound(mrp, features)
        classic = check_classic_bound(mrp, features)
        report.bounds += [bound, classic]

        mc_distance = float(np.linalg.norm(mc.w - w_m))
        td_distance = float(np.linalg.norm(w_td - w_n))
        oracle_gap = float(np.max(np.abs(w_n - w_n_tensor)))
        rows.append({
            "repetition": rep,
            "mc_distance": mc_distance,
            "td_distance": td_distance,
            "oracle_gap": oracle_gap,
            "degenerate_pairs": td_trace.degenerate_pairs,
            "bound_lhs": bound.lhs,
            "bound_rhs": bound.rhs,
            "bound_holds": bound.holds,
            "classic_lhs": classic.lhs,
            "classic_rhs": classic.rhs,
            "classic_holds": classic.holds,
        })
        frames.append(_trace_frame(mc.trace, repetition=rep, estimator="mc"))
        frames.append(_trace_frame(td_trace, repetition=rep, estimator="td0"))

        if mc_distance > cfg.tolerance:
            report.failures.append(f"repetition {rep}: Monte Carlo ended {mc_distance:.3e} from w^M")
        if td_distance > cfg.tolerance:
            report.failures.append(f"repetition {rep}: TD(0) ended {td_distance:.3e} from w^N")
        if oracle_gap > ORACLE_AGREEMENT:
            report.failures.append(f"repetition {rep}: tensor and loop fixed points differ by {oracle_gap:.3e}")
    report.tables["estimators"] = pd.DataFrame(rows)
    report.tables["traces"] = pd.concat(frames, ignore_index=True)
    _collect_bound_failures(report)
    return report


def _new_report(cfg: ExperimentConfig) -> ExperimentReport:
    echo = cfg.model_dump(exclude={"out"})
    return ExperimentReport(name=cfg.name, config=echo, config_hash=config_hash(echo))


def _collect_bound_failures(report: ExperimentReport):
    for bound in report.bounds:
        if not bound.holds:
            report.failures.append(f"{bound.kind} bound violated: {bound.lhs:.6g} > {bound.rhs:.6g}")


EXPERIMENTS: dict[str, Callable[[ExperimentConfig], ExperimentReport]] = {
    "outlier": run_outlier_experiment,
    "steps": run_step_comparison,
    "momentum": run_momentum_comparison,
    "rl": run_rl_estimators,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Dispatch an experiment by name and time it.

    Args:
        cfg (ExperimentConfig): Validated config.
    Returns:
        ExperimentReport: The report, with wall_time set.
    """
    logger.info(f"Starting experiment {cfg.name} ({config_hash(cfg.model_dump(exclude={'out'}))[:12]})")
    start = time.perf_counter()
    report = EXPERIMENTS[cfg.name](cfg)
    report.wall_time = time.perf_counter() - start
    if report.failures:
        logger.warning(f"Experiment {cfg.name} finished with failures: {report.failures}")
    logger.info(f"Finished experiment {cfg.name} in {report.wall_time:.2f}s")
    return report
