from fastapi import APIRouter, HTTPException
from app.models.requests import SolveRequest
from app.services.exceptions import SolverError
from app.services.linear_model import OverdeterminedSystem, least_squares_solution, scale_invariant_solution
from app.services.logging import logger
from app.services.total_projections import solve
from app.services.utils import frame_records

"""
Solve Router for overdetermined linear systems.
This router runs Total Projections on a posted system and returns the iterate together with
both closed-form solutions and the per-iteration trace.
"""

router = APIRouter()

@router.post("")
async def solve_system(request: SolveRequest):
    """
    Solve a system under the scale-invariant criterion.

    Args:
        request (SolveRequest): The system, solver settings and starting point.

    Returns:
        dict: w, scale_invariant_solution, least_squares_solution and trace records.

    Raises:
        HTTPException: 400 if the system is invalid or singular, 500 on any other error.
    """
    try:
        system = OverdeterminedSystem(request.phi, request.v, request.d)
        w_star = scale_invariant_solution(system)
        w, trace = solve(system, request.config, w0=request.w0, w_star=w_star)
        return {
            "w": w.tolist(),
            "scale_invariant_solution": w_star.tolist(),
            "least_squares_solution": least_squares_solution(system).tolist(),
            "trace": frame_records(trace.to_frame()),
        }
    except SolverError as e:
        logger.error(f"Error solving system: {str(e)}")
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error solving system: {str(e)}")
        raise HTTPException(status_code=500, detail=str(e))
