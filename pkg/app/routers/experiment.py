from typing import get_args
from fastapi import APIRouter, HTTPException
from pydantic import ValidationError
from app.database.storage import storage
from app.models.requests import ExperimentRequest
from app.models.schemas import ExperimentConfig, ExperimentName
from app.services.exceptions import AssertionFailed, SolverError
from app.services.experiments import run_experiment
from app.services.logging import logger
from app.services.utils import frame_records

"""
Experiment Router for the experiment harness.
This router runs a named experiment with posted overrides and returns its tables as JSON
records along with the report metadata.
"""

router = APIRouter()

@router.post("/{name}")
async def run(name: str, request: ExperimentRequest):
    """
    Run one experiment.

    Args:
        name (str): outlier, steps, momentum or rl.
        request (ExperimentRequest): Config overrides and the write flag.

    Returns:
        dict: Report metadata plus a "tables" mapping of table name to records.

    Raises:
        HTTPException: 404 for an unknown experiment, 400 for an invalid config,
            409 when a run-time check failed, 500 on any other error.
    """
    if name not in get_args(ExperimentName):
        raise HTTPException(status_code=404, detail=f"Unknown experiment {name}")
    try:
        params = {k: v for k, v in request.params.items() if k != "name"}
        cfg = ExperimentConfig.for_experiment(name, **params)
        report = run_experiment(cfg)
        if report.failures:
            raise AssertionFailed("; ".join(report.failures))
        if request.write:
            storage(cfg.out).write_report(report)
        response = report.metadata()
        response["tables"] = {table: frame_records(frame) for table, frame in report.tables.items()}
        return response
    except AssertionFailed as e:
        logger.error(f"Experiment {name} failed its checks: {str(e)}")
        raise HTTPException(status_code=409, detail=str(e))
    except (ValidationError, SolverError) as e:
        logger.error(f"Invalid experiment {name}: {str(e)}")
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error running experiment {name}: {str(e)}")
        raise HTTPException(status_code=500, detail=str(e))
