from typing import Any, Optional
from pydantic import BaseModel, Field
from app.models.schemas import SolverConfig

"""
Pydantic models for request validation in the Normalized Projections Application.

This module defines the request bodies of the HTTP endpoints. Numerical invariants (rank,
positive weights, finite entries) are checked by the services once the arrays are built.
"""

class SolveRequest(BaseModel):
    """
    Request model for solving a linear system.

    Fields:
        phi (list[list[float]]): m×n feature matrix, one row per equation.
        v (list[float]): Targets, length m.
        d (list[float], optional): Positive row weights; uniform when omitted.
        config (SolverConfig): Solver settings.
        w0 (list[float], optional): Starting point; zero when omitted.
    """
    phi: list[list[float]]
    v: list[float]
    d: Optional[list[float]] = None
    config: SolverConfig = Field(default_factory=SolverConfig)
    w0: Optional[list[float]] = None

class ExperimentRequest(BaseModel):
    """
    Request model for running an experiment.

    Fields:
        params (dict): ExperimentConfig fields overriding the experiment's defaults.
        write (bool): Also write the report files to the output directory.
    """
    params: dict[str, Any] = Field(default_factory=dict)
    write: bool = False
